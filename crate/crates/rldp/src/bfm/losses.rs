//! Critic and actor losses. Frozen branches (the encoder under
//! frozen-feature training, every target network, the adaptive BC weight)
//! are computed eagerly and enter the tape as constants.

use crate::autodiff::{Graph, Tensor, Var};
use crate::envs::{ActionKind, TransitionBatch};
use crate::repr::{actions_to_input, EncoderParams};
use crate::{Error, Result};

use super::BfmParams;

/// Transition batch as dense loss inputs; discrete actions one-hot encoded.
#[derive(Debug, Clone)]
pub struct BfmBatch {
    pub s: Tensor,
    pub a: Tensor,
    pub s_next: Tensor,
    pub s_plus: Tensor,
    pub done: Vec<bool>,
}

impl BfmBatch {
    pub fn from_transitions(
        tb: &TransitionBatch,
        kind: ActionKind,
        action_dim: usize,
    ) -> Result<Self> {
        let b = tb.batch;
        Ok(BfmBatch {
            s: Tensor::matrix(b, tb.obs_dim, tb.states.clone())?,
            a: actions_to_input(kind, action_dim, &tb.actions, tb.action_width, b),
            s_next: Tensor::matrix(b, tb.obs_dim, tb.next_states.clone())?,
            s_plus: Tensor::matrix(b, tb.obs_dim, tb.splus.clone())?,
            done: tb.done.clone(),
        })
    }

    pub fn batch(&self) -> usize {
        self.done.len()
    }
}

/// Bootstrap scalars gamma * (1-done_i) * psi_bar(s'_i, pi_z(s'_i), z_i)^T v_i
/// where v is phi(s+) (or phi_bar(s+) for the joint loss).
fn bootstrap_dots(
    bfm: &BfmParams,
    batch: &BfmBatch,
    z: &Tensor,
    phi_plus: &Tensor,
    gamma: f64,
) -> Result<Tensor> {
    let a_boot = bfm.target_policy_actions(&batch.s_next, z)?;
    let psi_bar = bfm.critic_forward_eager(&bfm.critic_target, &batch.s_next, &a_boot, z)?;
    let b = batch.batch();
    let mut vals = Vec::with_capacity(b);
    for i in 0..b {
        let mask = if batch.done[i] { 0.0 } else { 1.0 };
        vals.push(gamma * mask * crate::autodiff::kernels::dot(psi_bar.row(i), phi_plus.row(i)));
    }
    Tensor::matrix(b, 1, vals)
}

/// Contrastive successor-measure loss with frozen features:
///
///   -E[psi(s,a,z)^T phi(s')]
///   + 1/2 E[(psi(s,a,z)^T phi(s+) - gamma psi_bar(s',pi_z(s'),z)^T phi(s+))^2]
///
/// Bootstrapping is masked at episode-truncation markers.
pub fn loss_sm(
    graph: &mut Graph,
    bfm: &BfmParams,
    encoder: &EncoderParams,
    batch: &BfmBatch,
    z: &Tensor,
    gamma: f64,
) -> Result<Var> {
    let phi_next = encoder.encode(&batch.s_next)?;
    let phi_plus = encoder.encode(&batch.s_plus)?;
    let boot = bootstrap_dots(bfm, batch, z, &phi_plus, gamma)?;

    let s = graph.constant(batch.s.clone());
    let a = graph.constant(batch.a.clone());
    let zv = graph.constant(z.clone());
    let psi = bfm.critic_forward(graph, &bfm.critic, true, s, a, zv)?;

    let phi_next = graph.constant(phi_next);
    let rd1 = graph.row_dot(psi, phi_next)?;
    let m1 = graph.mean_all(rd1);
    let t1 = graph.scale(m1, -1.0);

    let phi_plus = graph.constant(phi_plus);
    let boot = graph.constant(boot);
    let rd2 = graph.row_dot(psi, phi_plus)?;
    let diff = graph.sub(rd2, boot)?;
    let sq = graph.mul(diff, diff)?;
    let m2 = graph.mean_all(sq);
    let t2 = graph.scale(m2, 0.5);

    graph.add(t1, t2)
}

/// Joint variant of the successor-measure loss: gradients flow into phi as
/// well, and the bootstrap contracts against the target encoder phi_bar.
/// With phi frozen (target equal to phi) it coincides with [`loss_sm`].
pub fn loss_fb_joint(
    graph: &mut Graph,
    bfm: &BfmParams,
    encoder: &EncoderParams,
    batch: &BfmBatch,
    z: &Tensor,
    gamma: f64,
) -> Result<Var> {
    let phibar_plus = encoder.encode_target(&batch.s_plus)?;
    let boot = bootstrap_dots(bfm, batch, z, &phibar_plus, gamma)?;

    let s = graph.constant(batch.s.clone());
    let a = graph.constant(batch.a.clone());
    let zv = graph.constant(z.clone());
    let psi = bfm.critic_forward(graph, &bfm.critic, true, s, a, zv)?;

    let s_next = graph.constant(batch.s_next.clone());
    let phi_next = encoder.encode_taped(graph, s_next)?;
    let rd1 = graph.row_dot(psi, phi_next)?;
    let m1 = graph.mean_all(rd1);
    let t1 = graph.scale(m1, -1.0);

    let s_plus = graph.constant(batch.s_plus.clone());
    let phi_plus = encoder.encode_taped(graph, s_plus)?;
    let boot = graph.constant(boot);
    let rd2 = graph.row_dot(psi, phi_plus)?;
    let diff = graph.sub(rd2, boot)?;
    let sq = graph.mul(diff, diff)?;
    let m2 = graph.mean_all(sq);
    let t2 = graph.scale(m2, 0.5);

    graph.add(t1, t2)
}

/// Vector-valued TD loss on the features directly:
/// E[ (psi(s,a,z) - [phi(s) + gamma psi_bar(s',pi_z(s'),z)])^2 ],
/// mean over batch and the d components. The target anchors at phi(s), not
/// phi(s'), following the reference formula verbatim.
pub fn loss_usfa(
    graph: &mut Graph,
    bfm: &BfmParams,
    encoder: &EncoderParams,
    batch: &BfmBatch,
    z: &Tensor,
    gamma: f64,
) -> Result<Var> {
    let phi_s = encoder.encode(&batch.s)?;
    let a_boot = bfm.target_policy_actions(&batch.s_next, z)?;
    let psi_bar = bfm.critic_forward_eager(&bfm.critic_target, &batch.s_next, &a_boot, z)?;
    let b = batch.batch();
    let d = bfm.d;
    let mut target = Vec::with_capacity(b * d);
    for i in 0..b {
        let mask = if batch.done[i] { 0.0 } else { 1.0 };
        for j in 0..d {
            target.push(phi_s.row(i)[j] + gamma * mask * psi_bar.row(i)[j]);
        }
    }
    let target = Tensor::matrix(b, d, target)?;

    let s = graph.constant(batch.s.clone());
    let a = graph.constant(batch.a.clone());
    let zv = graph.constant(z.clone());
    let psi = bfm.critic_forward(graph, &bfm.critic, true, s, a, zv)?;
    let target = graph.constant(target);
    let diff = graph.sub(psi, target)?;
    let sq = graph.mul(diff, diff)?;
    Ok(graph.mean_all(sq))
}

/// Greedy policy-improvement loss -E[psi(s, pi_z(s), z)^T z]. Continuous
/// actors only; discrete environments use the exact argmax instead.
pub fn loss_policy(graph: &mut Graph, bfm: &BfmParams, states: &Tensor, z: &Tensor) -> Result<Var> {
    if bfm.discrete {
        return Err(Error::InvalidArgument {
            context: "loss_policy needs a continuous actor; discrete uses exact argmax".into(),
        });
    }
    let s = graph.constant(states.clone());
    let zv = graph.constant(z.clone());
    let actions = bfm.actor_forward(graph, &bfm.actor, true, s, zv)?;
    let psi = bfm.critic_forward(graph, &bfm.critic, false, s, actions, zv)?;
    let q = graph.row_dot(psi, zv)?;
    let m = graph.mean_all(q);
    Ok(graph.scale(m, -1.0))
}

/// Adaptive BC weight: alpha / mean|Q|, with the mean floored at 1e-8.
pub fn bc_lambda_hat(alpha: f64, mean_abs_q: f64) -> f64 {
    alpha / mean_abs_q.max(1e-8)
}

/// Behavior-cloning regularized policy loss
/// -lambda_hat * E[psi(s,pi_z(s),z)^T z] + E[(pi_z(s) - a)^2], with
/// lambda_hat = alpha / mean|Q(s,a,z)| computed on the dataset actions of the
/// current batch and treated as a constant.
pub fn loss_policy_bc(
    graph: &mut Graph,
    bfm: &BfmParams,
    states: &Tensor,
    dataset_actions: &Tensor,
    z: &Tensor,
    alpha: f64,
) -> Result<(Var, f64)> {
    if bfm.discrete {
        return Err(Error::InvalidArgument {
            context: "loss_policy_bc needs a continuous actor".into(),
        });
    }
    let psi_data = bfm.critic_forward_eager(&bfm.critic, states, dataset_actions, z)?;
    let b = states.rows();
    let mean_abs_q = (0..b)
        .map(|i| crate::autodiff::kernels::dot(psi_data.row(i), z.row(i)).abs())
        .sum::<f64>()
        / b as f64;
    let lambda_hat = bc_lambda_hat(alpha, mean_abs_q);

    let s = graph.constant(states.clone());
    let zv = graph.constant(z.clone());
    let actions = bfm.actor_forward(graph, &bfm.actor, true, s, zv)?;
    let psi = bfm.critic_forward(graph, &bfm.critic, false, s, actions, zv)?;
    let q = graph.row_dot(psi, zv)?;
    let mq = graph.mean_all(q);
    let t1 = graph.scale(mq, -lambda_hat);

    let a_data = graph.constant(dataset_actions.clone());
    let diff = graph.sub(actions, a_data)?;
    let sq = graph.mul(diff, diff)?;
    let t2 = graph.mean_all(sq);

    Ok((graph.add(t1, t2)?, lambda_hat))
}

/// Fraction of `loss_sm`'s value contributed by its squared Bellman-residual
/// term, evaluated eagerly; used by convergence diagnostics.
pub fn sm_bellman_residual_term(
    bfm: &BfmParams,
    encoder: &EncoderParams,
    batch: &BfmBatch,
    z: &Tensor,
    gamma: f64,
) -> Result<f64> {
    let phi_plus = encoder.encode(&batch.s_plus)?;
    let boot = bootstrap_dots(bfm, batch, z, &phi_plus, gamma)?;
    let psi = bfm.critic_forward_eager(&bfm.critic, &batch.s, &batch.a, z)?;
    let b = batch.batch();
    let mut acc = 0.0;
    for i in 0..b {
        let rd = crate::autodiff::kernels::dot(psi.row(i), phi_plus.row(i));
        let r = rd - boot.row(i)[0];
        acc += r * r;
    }
    Ok(0.5 * acc / b as f64)
}

/// Eager value of the behavior-cloning term alone (diagnostics).
pub fn bc_term(bfm: &BfmParams, states: &Tensor, dataset_actions: &Tensor, z: &Tensor) -> Result<f64> {
    let out = bfm.actor_forward_eager(&bfm.actor, states, z)?;
    let diff: f64 = out
        .values()
        .iter()
        .zip(dataset_actions.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(diff / out.numel() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{adam_step, AdamState, Activation, MlpSpec, OutputTransform, ParamStore};
    use crate::bfm::{CriticNet, CriticVariant};
    use crate::repr::ReprMethod;

    const R2: f64 = std::f64::consts::SQRT_2;

    /// Identity encoder over 2-state one-hot observations (d = 2).
    fn onehot_encoder(d: usize) -> EncoderParams {
        let mut params = ParamStore::new();
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        params.insert("phi.w0", Tensor::matrix(d, d, eye).unwrap()).unwrap();
        params.insert("phi.b0", Tensor::new(vec![d], vec![0.0; d]).unwrap()).unwrap();
        let target = crate::autodiff::hard_copy_targets(&params);
        EncoderParams {
            obs_dim: d,
            action_input_dim: 1,
            d,
            horizon: 1,
            lambda: 0.0,
            method: ReprMethod::Rldp,
            phi_spec: MlpSpec::relu(vec![d, d], OutputTransform::Sphere),
            aproj_spec: MlpSpec::relu(vec![1, 1], OutputTransform::None),
            g_spec: MlpSpec::relu(vec![d + 1, d], OutputTransform::None),
            params,
            target,
        }
    }

    /// Encoder emitting exactly zero (no sphere transform, zero weights).
    fn zero_encoder(d: usize) -> EncoderParams {
        let mut enc = onehot_encoder(d);
        enc.phi_spec = MlpSpec::relu(vec![d, d], OutputTransform::None);
        *enc.params.get_mut("phi.w0").unwrap() = Tensor::zeros(vec![d, d]);
        enc.refresh_target();
        enc
    }

    /// Exact-expectation batch for the 2-state swap MDP (0 <-> 1), with the
    /// s+ column covering both states uniformly per (s,a,s').
    fn swap_batch() -> (BfmBatch, Tensor) {
        let e0 = vec![R2, 0.0];
        let e1 = vec![0.0, R2];
        let rows = [
            (e0.clone(), e1.clone(), e0.clone()),
            (e0.clone(), e1.clone(), e1.clone()),
            (e1.clone(), e0.clone(), e0.clone()),
            (e1.clone(), e0.clone(), e1.clone()),
        ];
        let mut s = Vec::new();
        let mut sn = Vec::new();
        let mut sp = Vec::new();
        for (a, b, c) in &rows {
            s.extend_from_slice(a);
            sn.extend_from_slice(b);
            sp.extend_from_slice(c);
        }
        let batch = BfmBatch {
            s: Tensor::matrix(4, 2, s).unwrap(),
            a: Tensor::matrix(4, 1, vec![1.0; 4]).unwrap(),
            s_next: Tensor::matrix(4, 2, sn).unwrap(),
            s_plus: Tensor::matrix(4, 2, sp).unwrap(),
            done: vec![false; 4],
        };
        let z = Tensor::matrix(4, 2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        (batch, z)
    }

    #[test]
    fn zero_critic_gives_zero_sm_loss_and_first_term_gradient() {
        let enc = onehot_encoder(2);
        let bfm = BfmParams::init_tabular(2, 1, 2, CriticVariant::SuccessorMeasure).unwrap();
        let (batch, z) = swap_batch();
        let mut g = Graph::new();
        let loss = loss_sm(&mut g, &bfm, &enc, &batch, &z, 0.9).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);

        let mut params = bfm.critic.clone();
        g.backward(loss, &mut params).unwrap();
        // only the -E[psi^T phi(s')] term contributes at psi == 0:
        // rows of the table gradient are -mean of phi(s') over matching (s,a)
        let grad = params.get("psi_table").unwrap().grad().unwrap();
        // state 0 rows saw phi(s') = [0, r2] twice out of 4 samples
        assert!((grad[0] - 0.0).abs() < 1e-12);
        assert!((grad[1] + R2 / 2.0).abs() < 1e-12);
        // state 1 rows saw phi(s') = [r2, 0] twice out of 4 samples
        assert!((grad[2] + R2 / 2.0).abs() < 1e-12);
        assert!((grad[3] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn sm_gamma_zero_training_converges_to_one_step_density() {
        // minimizer of the contrastive loss at gamma = 0: m = P(x|s,a)/rho(x)
        let enc = onehot_encoder(2);
        let mut bfm = BfmParams::init_tabular(2, 1, 2, CriticVariant::SuccessorMeasure).unwrap();
        let (batch, z) = swap_batch();
        let mut adam = AdamState::new(&bfm.critic, 0.05);
        for _ in 0..2000 {
            let mut g = Graph::new();
            let loss = loss_sm(&mut g, &bfm, &enc, &batch, &z, 0.0).unwrap();
            g.backward(loss, &mut bfm.critic).unwrap();
            adam_step(&mut adam, &mut bfm.critic).unwrap();
        }
        // m(s,a,x) = psi[s,a]^T phi(x) = table[s][x] * r2; expected P/rho = 2
        // at the swapped state, 0 elsewhere
        let table = bfm.critic.get("psi_table").unwrap().values();
        let m = |s: usize, x: usize| table[s * 2 + x] * R2;
        assert!((m(0, 1) - 2.0).abs() < 1e-2, "m(0,.,1) = {}", m(0, 1));
        assert!(m(0, 0).abs() < 1e-2);
        assert!((m(1, 0) - 2.0).abs() < 1e-2);
        assert!(m(1, 1).abs() < 1e-2);
    }

    #[test]
    fn usfa_fixed_point_has_zero_loss() {
        // swap MDP: psi*[s] = phi(s) + gamma * psi*[other]
        let enc = onehot_encoder(2);
        let gamma = 0.9;
        let mut bfm = BfmParams::init_tabular(2, 1, 2, CriticVariant::Usfa).unwrap();
        let denom = 1.0 - gamma * gamma;
        // phi(0) = [r2, 0], phi(1) = [0, r2]
        let psi0 = [R2 / denom, gamma * R2 / denom];
        let psi1 = [gamma * R2 / denom, R2 / denom];
        {
            let t = bfm.critic.get_mut("psi_table").unwrap();
            t.values_mut()[..2].copy_from_slice(&psi0);
            t.values_mut()[2..].copy_from_slice(&psi1);
        }
        bfm.refresh_targets();
        let (batch, z) = swap_batch();
        let mut g = Graph::new();
        let loss = loss_usfa(&mut g, &bfm, &enc, &batch, &z, gamma).unwrap();
        assert!(g.value(loss).item() < 1e-26, "loss {}", g.value(loss).item());
    }

    #[test]
    fn usfa_gamma_zero_training_recovers_phi() {
        let enc = onehot_encoder(2);
        let mut bfm = BfmParams::init_tabular(2, 1, 2, CriticVariant::Usfa).unwrap();
        let (batch, z) = swap_batch();
        let mut adam = AdamState::new(&bfm.critic, 0.05);
        for _ in 0..1500 {
            let mut g = Graph::new();
            let loss = loss_usfa(&mut g, &bfm, &enc, &batch, &z, 0.0).unwrap();
            g.backward(loss, &mut bfm.critic).unwrap();
            adam_step(&mut adam, &mut bfm.critic).unwrap();
        }
        let table = bfm.critic.get("psi_table").unwrap().values();
        let expected = [R2, 0.0, 0.0, R2];
        for (t, e) in table.iter().zip(&expected) {
            assert!((t - e).abs() < 1e-2, "{t} vs {e}");
        }
    }

    #[test]
    fn usfa_zero_features_keep_zero_critic_at_the_minimum() {
        let enc = zero_encoder(2);
        let bfm = BfmParams::init_tabular(2, 1, 2, CriticVariant::Usfa).unwrap();
        let (batch, z) = swap_batch();
        let mut g = Graph::new();
        let loss = loss_usfa(&mut g, &bfm, &enc, &batch, &z, 0.9).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
        let mut params = bfm.critic.clone();
        g.backward(loss, &mut params).unwrap();
        assert!(params.get("psi_table").unwrap().grad().unwrap().iter().all(|&v| v == 0.0));
    }

    /// Continuous fixture: psi(s,a,z)^T z = -sum_j |a_j - a*_j| realized
    /// exactly with relu pairs; d = 1, z = 1.
    fn bowl_bfm(a_star: [f64; 2]) -> BfmParams {
        let obs = 2;
        let na = 2;
        let sa_spec = MlpSpec {
            layer_widths: vec![obs + na, 4],
            activations: vec![Activation::Relu],
            output_transform: OutputTransform::None,
        };
        let sz_spec = MlpSpec {
            layer_widths: vec![obs + 1, 4],
            activations: vec![Activation::Relu],
            output_transform: OutputTransform::None,
        };
        let head_spec = MlpSpec {
            layer_widths: vec![8, 4, 1],
            activations: vec![Activation::Relu, Activation::None],
            output_transform: OutputTransform::None,
        };
        let mut critic = ParamStore::new();
        // e1 = [relu(a0 - a0*), relu(a0* - a0), relu(a1 - a1*), relu(a1* - a1)]
        #[rustfmt::skip]
        let sa_w0 = vec![
            0.0, 0.0, 0.0, 0.0, // s0
            0.0, 0.0, 0.0, 0.0, // s1
            1.0, -1.0, 0.0, 0.0, // a0
            0.0, 0.0, 1.0, -1.0, // a1
        ];
        let sa_b0 = vec![-a_star[0], a_star[0], -a_star[1], a_star[1]];
        critic.insert("psi_sa.w0", Tensor::matrix(4, 4, sa_w0).unwrap()).unwrap();
        critic.insert("psi_sa.b0", Tensor::new(vec![4], sa_b0).unwrap()).unwrap();
        critic.insert("psi_sz.w0", Tensor::zeros(vec![3, 4])).unwrap();
        critic.insert("psi_sz.b0", Tensor::zeros(vec![4])).unwrap();
        // head: pass e1 through identity relu (e1 >= 0), then sum with -1
        let mut head_w0 = vec![0.0; 8 * 4];
        for i in 0..4 {
            head_w0[i * 4 + i] = 1.0;
        }
        critic.insert("psi_head.w0", Tensor::matrix(8, 4, head_w0).unwrap()).unwrap();
        critic.insert("psi_head.b0", Tensor::zeros(vec![4])).unwrap();
        critic.insert("psi_head.w1", Tensor::matrix(4, 1, vec![-1.0; 4]).unwrap()).unwrap();
        critic.insert("psi_head.b1", Tensor::zeros(vec![1])).unwrap();

        let actor_spec = MlpSpec::relu(vec![obs + 1, 8, 8, na], OutputTransform::Tanh);
        let mut actor = ParamStore::new();
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        crate::autodiff::init_mlp_params(&actor_spec, "actor", &mut actor, &mut rng).unwrap();

        BfmParams {
            obs_dim: obs,
            action_input_dim: na,
            d: 1,
            discrete: false,
            critic_variant: CriticVariant::SuccessorMeasure,
            actor_variant: crate::bfm::ActorVariant::Greedy,
            critic_net: CriticNet::Mlp { sa_spec, sz_spec, head_spec },
            actor_spec: Some(actor_spec),
            critic_target: ParamStore::new(),
            critic,
            actor_target: hard_copy(&actor),
            actor,
        }
    }

    fn hard_copy(p: &ParamStore) -> ParamStore {
        crate::autodiff::hard_copy_targets(p)
    }

    #[test]
    fn policy_gradient_pulls_actor_toward_the_bowl_minimum() {
        let a_star = [0.3, -0.4];
        let mut bfm = bowl_bfm(a_star);
        let states = Tensor::matrix(4, 2, vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, -0.5, 1.0]).unwrap();
        let z = Tensor::matrix(4, 1, vec![1.0; 4]).unwrap();
        let dist = |bfm: &BfmParams| -> f64 {
            let out = bfm.actor_forward_eager(&bfm.actor, &states, &z).unwrap();
            out.values()
                .chunks(2)
                .map(|a| (a[0] - a_star[0]).abs() + (a[1] - a_star[1]).abs())
                .sum::<f64>()
                / 4.0
        };
        let before = dist(&bfm);
        let mut adam = AdamState::new(&bfm.actor, 1e-2);
        for _ in 0..200 {
            let mut g = Graph::new();
            let loss = loss_policy(&mut g, &bfm, &states, &z).unwrap();
            g.backward(loss, &mut bfm.actor).unwrap();
            adam_step(&mut adam, &mut bfm.actor).unwrap();
        }
        let after = dist(&bfm);
        assert!(after < before * 0.2, "distance {before} -> {after}");
        // critic weights never received gradients (registered as constants)
        let mut g = Graph::new();
        let loss = loss_policy(&mut g, &bfm, &states, &z).unwrap();
        let mut critic = bfm.critic.clone();
        g.backward(loss, &mut critic).unwrap();
        for (_, t) in critic.iter() {
            assert!(t.grad().unwrap().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn lambda_hat_formula_on_hand_batch() {
        assert_eq!(bc_lambda_hat(2.5, 2.0), 1.25);
        // Q values [1, -3] realized through a critic with psi^T z = a_data
        let mut bfm = bowl_bfm([0.0, 0.0]);
        // rewire: e1 = [relu(a0), relu(-a0), 0, 0], head sums [1,-1,0,0]
        #[rustfmt::skip]
        let sa_w0 = vec![
            0.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, -1.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        *bfm.critic.get_mut("psi_sa.w0").unwrap() = Tensor::matrix(4, 4, sa_w0).unwrap();
        *bfm.critic.get_mut("psi_sa.b0").unwrap() = Tensor::zeros(vec![4]);
        *bfm.critic.get_mut("psi_head.w1").unwrap() =
            Tensor::matrix(4, 1, vec![1.0, -1.0, 0.0, 0.0]).unwrap();
        let states = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let actions = Tensor::matrix(2, 2, vec![1.0, 0.0, -3.0, 0.0]).unwrap();
        let z = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let (_, lambda_hat) = loss_policy_bc(&mut g, &bfm, &states, &actions, &z, 2.5).unwrap();
        assert_eq!(lambda_hat, 1.25);
    }

    #[test]
    fn zero_critic_reduces_bc_loss_to_mean_squared_error() {
        let mut bfm = bowl_bfm([0.0, 0.0]);
        for name in ["psi_sa.w0", "psi_sa.b0", "psi_head.w0", "psi_head.b0", "psi_head.w1"] {
            let t = bfm.critic.get_mut(name).unwrap();
            let zeros = vec![0.0; t.numel()];
            t.values_mut().copy_from_slice(&zeros);
        }
        let states = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let actions = Tensor::matrix(2, 2, vec![0.1, -0.2, 0.3, 0.4]).unwrap();
        let z = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let mut g = Graph::new();
        let (loss, _) = loss_policy_bc(&mut g, &bfm, &states, &actions, &z, 2.5).unwrap();
        let expected = bc_term(&bfm, &states, &actions, &z).unwrap();
        assert!((g.value(loss).item() - expected).abs() < 1e-14);
    }

    #[test]
    fn constant_q_with_cloned_actions_gives_minus_lambda_q() {
        // critic constant: psi = c regardless of inputs; actor bias equals
        // the dataset actions -> BC term 0, loss = -lambda_hat * c
        let mut bfm = bowl_bfm([0.0, 0.0]);
        for name in ["psi_sa.w0", "psi_sa.b0", "psi_head.w0", "psi_head.b0"] {
            let t = bfm.critic.get_mut(name).unwrap();
            let zeros = vec![0.0; t.numel()];
            t.values_mut().copy_from_slice(&zeros);
        }
        let c = 0.8;
        *bfm.critic.get_mut("psi_head.w1").unwrap() = Tensor::zeros(vec![4, 1]);
        *bfm.critic.get_mut("psi_head.b1").unwrap() = Tensor::new(vec![1], vec![c]).unwrap();
        // actor: zero weights, final bias = atanh(a_data)
        let a_data = [0.25f64, -0.5];
        for name in ["actor.w0", "actor.b0", "actor.w1", "actor.b1", "actor.w2"] {
            let t = bfm.actor.get_mut(name).unwrap();
            let zeros = vec![0.0; t.numel()];
            t.values_mut().copy_from_slice(&zeros);
        }
        *bfm.actor.get_mut("actor.b2").unwrap() =
            Tensor::new(vec![2], vec![a_data[0].atanh(), a_data[1].atanh()]).unwrap();
        let states = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let actions = Tensor::matrix(1, 2, a_data.to_vec()).unwrap();
        let z = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let mut g = Graph::new();
        let (loss, lambda_hat) = loss_policy_bc(&mut g, &bfm, &states, &actions, &z, 2.5).unwrap();
        assert!((lambda_hat - 2.5 / c).abs() < 1e-12);
        assert!((g.value(loss).item() + lambda_hat * c).abs() < 1e-12);
    }

    #[test]
    fn fb_joint_with_frozen_phi_reduces_to_sm() {
        let enc = onehot_encoder(2);
        let mut bfm = BfmParams::init_tabular(2, 1, 2, CriticVariant::SuccessorMeasure).unwrap();
        bfm.critic
            .get_mut("psi_table")
            .unwrap()
            .values_mut()
            .copy_from_slice(&[0.3, -0.1, 0.7, 0.2]);
        bfm.refresh_targets();
        let (batch, z) = swap_batch();

        let mut g1 = Graph::new();
        let l1 = loss_sm(&mut g1, &bfm, &enc, &batch, &z, 0.9).unwrap();
        let mut p1 = bfm.critic.clone();
        g1.backward(l1, &mut p1).unwrap();

        let mut g2 = Graph::new();
        let l2 = loss_fb_joint(&mut g2, &bfm, &enc, &batch, &z, 0.9).unwrap();
        let mut p2 = bfm.critic.clone();
        let mut phi = enc.params.clone();
        g2.backward_multi(l2, &mut [&mut p2, &mut phi]).unwrap();

        assert_eq!(g1.value(l1).item(), g2.value(l2).item());
        assert_eq!(
            p1.get("psi_table").unwrap().grad().unwrap(),
            p2.get("psi_table").unwrap().grad().unwrap()
        );
        // and the joint loss does push on phi for generic inputs
        let phi_grad_norm: f64 = phi
            .get("phi.w0")
            .unwrap()
            .grad()
            .unwrap()
            .iter()
            .map(|v| v * v)
            .sum();
        assert!(phi_grad_norm > 0.0);
    }
}
