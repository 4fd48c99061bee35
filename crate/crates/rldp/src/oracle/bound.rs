//! Numerical report for the successor-measure prediction-error bound.
//!
//! The latent MDP is built by aggregating states whose encoder embeddings are
//! identical after quantization to a 1e-6 grid; transitions and the policy
//! are rho-weighted averages within each cluster. The report computes
//!
//!   lhs = E_{s,a ~ d^pi, s+ ~ rho} | M^pi(s,a,s+) - M_bar^pi(phi(s),a,phi(s+)) |
//!   rhs = (L_dynamics + lambda * L_ortho) / (1 - gamma)
//!
//! and does NOT assert lhs <= rhs in general: the Lipschitz constants the
//! inequality depends on are never measured. The identity-abstraction case
//! collapses to lhs = 0 exactly and is asserted in tests.

use crate::autodiff::Tensor;
use crate::envs::Dataset;
use crate::repr::{EncoderParams, SegmentBatch};
use crate::{Error, Result};

use super::{successor_measure_exact, visitation_exact, TabularMdp, TabularPolicy};

#[derive(Debug, Clone, Copy)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub loss_dynamics: f64,
    pub loss_ortho: f64,
    pub lambda: f64,
    pub n_latent_states: usize,
}

const QUANT: f64 = 1e-6;

fn quantize(row: &[f64]) -> Vec<i64> {
    row.iter().map(|v| (v / QUANT).round() as i64).collect()
}

/// Cluster states by quantized embedding; returns (cluster of each state,
/// number of clusters).
fn cluster_states(embeddings: &Tensor) -> (Vec<usize>, usize) {
    let mut keys: std::collections::HashMap<Vec<i64>, usize> = std::collections::HashMap::new();
    let mut assignment = Vec::with_capacity(embeddings.rows());
    for i in 0..embeddings.rows() {
        let key = quantize(embeddings.row(i));
        let next = keys.len();
        let id = *keys.entry(key).or_insert(next);
        assignment.push(id);
    }
    (assignment, keys.len())
}

/// Exact mean of the dynamics loss over every valid horizon-H segment of the
/// dataset, with the encoder's frozen target branch.
fn dynamics_loss_full_sweep(enc: &EncoderParams, dataset: &Dataset) -> Result<f64> {
    let horizon = enc.horizon;
    let mut segments = Vec::new();
    for ep in &dataset.episodes {
        if ep.len() < horizon {
            continue;
        }
        for start in 0..=(ep.len() - horizon) {
            let mut states = Vec::with_capacity(horizon + 1);
            let mut actions = Vec::with_capacity(horizon);
            states.push(ep[start].state.clone());
            for t in 0..horizon {
                actions.push(ep[start + t].action.clone());
                states.push(ep[start + t].next_state.clone());
            }
            segments.push(crate::envs::Segment { states, actions });
        }
    }
    if segments.is_empty() {
        return Err(Error::Dataset {
            context: format!("no segments of horizon {horizon} for the bound report"),
        });
    }
    let batch =
        SegmentBatch::from_segments(&segments, dataset.meta.action_kind, dataset.meta.action_dim)?;
    let b = batch.batch();
    let mut h = enc.encode(&batch.states[0])?;
    let mut total = 0.0;
    for t in 0..horizon {
        h = enc.latent_step(&h, &batch.actions[t])?;
        let target = enc.encode_target(&batch.states[t + 1])?;
        for (p, q) in h.values().iter().zip(target.values()) {
            total += (p - q) * (p - q);
        }
    }
    Ok(total / b as f64)
}

/// Off-diagonal Gram mean of phi over a deterministic, evenly strided sample
/// of dataset states (cap 512).
fn ortho_loss_sweep(enc: &EncoderParams, dataset: &Dataset) -> Result<f64> {
    let n = dataset.n_transitions();
    let count = n.min(512);
    if count < 2 {
        return Err(Error::Dataset { context: "need at least 2 states for the ortho term".into() });
    }
    let obs = dataset.meta.obs_dim;
    let mut vals = Vec::with_capacity(count * obs);
    for i in 0..count {
        let idx = i * n / count;
        vals.extend_from_slice(&dataset.transition(idx).state);
    }
    let phi = enc.encode(&Tensor::matrix(count, obs, vals)?)?;
    let gram =
        crate::autodiff::kernels::matmul_nt(phi.values(), phi.values(), count, enc.d, count);
    let mut sum = 0.0;
    for i in 0..count {
        for j in 0..count {
            if i != j {
                sum += gram[i * count + j];
            }
        }
    }
    Ok(sum / (count * (count - 1)) as f64)
}

/// Compute both sides of the successor-measure prediction-error bound.
///
/// `observations` maps each MDP state index to its observation vector
/// ([S x obs_dim]); `d0` (uniform over states) seeds the visitation weight.
pub fn lemma_bound_report(
    enc: &EncoderParams,
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    observations: &Tensor,
    dataset: &Dataset,
) -> Result<BoundReport> {
    let s_n = mdp.n_states;
    let a_n = mdp.n_actions;
    if observations.rows() != s_n {
        return Err(Error::Shape {
            context: "lemma_bound_report".into(),
            detail: format!("observations rows {} != n_states {s_n}", observations.rows()),
        });
    }

    let embeddings = enc.encode(observations)?;
    let (cluster, n_latent) = cluster_states(&embeddings);

    // rho-weighted aggregation of P and pi over clusters (uniform fallback
    // for clusters with zero total rho)
    let mut cluster_weight = vec![0.0; n_latent];
    let mut cluster_size = vec![0usize; n_latent];
    for s in 0..s_n {
        cluster_weight[cluster[s]] += mdp.rho[s];
        cluster_size[cluster[s]] += 1;
    }
    let state_weight = |s: usize| {
        if cluster_weight[cluster[s]] > 0.0 {
            mdp.rho[s] / cluster_weight[cluster[s]]
        } else {
            1.0 / cluster_size[cluster[s]] as f64
        }
    };

    let mut p_bar = vec![0.0; n_latent * a_n * n_latent];
    let mut pi_bar = vec![0.0; n_latent * a_n];
    let mut rho_bar = vec![0.0; n_latent];
    for s in 0..s_n {
        let c = cluster[s];
        let w = state_weight(s);
        rho_bar[c] += mdp.rho[s];
        for a in 0..a_n {
            pi_bar[c * a_n + a] += w * policy.row(s)[a];
            let p_row = mdp.p_row(s, a);
            for (sp, &p) in p_row.iter().enumerate() {
                if p != 0.0 {
                    p_bar[(c * a_n + a) * n_latent + cluster[sp]] += w * p;
                }
            }
        }
    }
    // clean up tiny weight drift so the latent MDP validates
    for row in p_bar.chunks_mut(n_latent) {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 && (sum - 1.0).abs() <= 1e-9 {
            let k = row.iter().position(|&v| v > 0.0).unwrap();
            row[k] += 1.0 - sum;
        }
    }
    let mut pi_bar_fixed = pi_bar.clone();
    for row in pi_bar_fixed.chunks_mut(a_n) {
        let sum: f64 = row.iter().sum();
        if sum > 0.0 {
            let k = row.iter().position(|&v| v > 0.0).unwrap();
            row[k] += 1.0 - sum;
        }
    }

    let latent = TabularMdp::new(n_latent, a_n, p_bar, rho_bar, mdp.gamma)?;
    let pi_latent = TabularPolicy::new(n_latent, a_n, pi_bar_fixed)?;

    let m = successor_measure_exact(mdp, policy)?;
    let m_bar = successor_measure_exact(&latent, &pi_latent)?;

    let d0 = vec![1.0 / s_n as f64; s_n];
    let d_pi = visitation_exact(mdp, policy, &d0)?;

    let mut lhs = 0.0;
    for s in 0..s_n {
        for a in 0..a_n {
            let w_sa = d_pi[s] * policy.row(s)[a];
            if w_sa == 0.0 {
                continue;
            }
            let m_row = &m[(s * a_n + a) * s_n..(s * a_n + a + 1) * s_n];
            let mb_row =
                &m_bar[(cluster[s] * a_n + a) * n_latent..(cluster[s] * a_n + a + 1) * n_latent];
            for (sp, &mv) in m_row.iter().enumerate() {
                let diff = (mv - mb_row[cluster[sp]]).abs();
                lhs += w_sa * mdp.rho[sp] * diff;
            }
        }
    }

    let loss_dynamics = dynamics_loss_full_sweep(enc, dataset)?;
    let loss_ortho = ortho_loss_sweep(enc, dataset)?;
    let rhs = (loss_dynamics + enc.lambda * loss_ortho) / (1.0 - mdp.gamma);

    Ok(BoundReport { lhs, rhs, loss_dynamics, loss_ortho, lambda: enc.lambda, n_latent_states: n_latent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{hard_copy_targets, MlpSpec, OutputTransform, ParamStore};
    use crate::envs::{ActionKind, Dataset, DatasetMeta, GridAction, GridObs, GridWorld, Transition};
    use crate::repr::ReprMethod;

    /// Identity-abstraction encoder for a gridworld: phi is the one-hot
    /// identity (sphere projection leaves one-hot rows in place), A is the
    /// 4-action identity, g gates on (state, action) pairs to emit the true
    /// next-state one-hot exactly, w is the identity.
    fn identity_encoder(env: &GridWorld) -> EncoderParams {
        let n = env.n_free();
        let d = n;
        let sqrt_d = (d as f64).sqrt();
        let mut params = ParamStore::new();
        // phi: identity over one-hot observations
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        params.insert("phi.w0", Tensor::matrix(n, n, eye.clone()).unwrap()).unwrap();
        params.insert("phi.b0", Tensor::new(vec![n], vec![0.0; n]).unwrap()).unwrap();
        // A: identity on the 4-dim one-hot action
        let mut eye4 = vec![0.0; 16];
        for i in 0..4 {
            eye4[i * 4 + i] = 1.0;
        }
        params.insert("aproj.w0", Tensor::matrix(4, 4, eye4).unwrap()).unwrap();
        params.insert("aproj.b0", Tensor::new(vec![4], vec![0.0; 4]).unwrap()).unwrap();
        // g: one hidden unit per (s,a); unit fires iff h[s]=sqrt(d) and a[a]=1
        let hidden = n * 4;
        let mut w0 = vec![0.0; (n + 4) * hidden];
        let mut w1 = vec![0.0; hidden * n];
        for s in 0..n {
            for a in 0..4 {
                let u = s * 4 + a;
                w0[s * hidden + u] = 1.0 / sqrt_d; // h[s] / sqrt(d) = 1 when active
                w0[(n + a) * hidden + u] = 1.0; // + a[a]
                let cell = env.cell_at(s);
                let next = env.step(cell, GridAction::from_index(a).unwrap());
                let nid = env.cell_id(next.0, next.1).unwrap();
                w1[u * n + nid] = sqrt_d;
            }
        }
        params.insert("g.w0", Tensor::matrix(n + 4, hidden, w0).unwrap()).unwrap();
        params
            .insert("g.b0", Tensor::new(vec![hidden], vec![-1.0; hidden]).unwrap())
            .unwrap();
        params.insert("g.w1", Tensor::matrix(hidden, n, w1).unwrap()).unwrap();
        params.insert("g.b1", Tensor::new(vec![n], vec![0.0; n]).unwrap()).unwrap();
        let mut eye_d = vec![0.0; d * d];
        for i in 0..d {
            eye_d[i * d + i] = 1.0;
        }
        params.insert("wmap.w", Tensor::matrix(d, d, eye_d).unwrap()).unwrap();
        let target = hard_copy_targets(&params);
        EncoderParams {
            obs_dim: n,
            action_input_dim: 4,
            d,
            horizon: 1,
            lambda: 1.0,
            method: ReprMethod::Rldp,
            phi_spec: MlpSpec::relu(vec![n, n], OutputTransform::Sphere),
            aproj_spec: MlpSpec::relu(vec![4, 4], OutputTransform::None),
            g_spec: MlpSpec::relu(vec![n + 4, hidden, n], OutputTransform::None),
            params,
            target,
        }
    }

    /// Exhaustive one-step dataset: every (cell, action) once.
    fn exhaustive_dataset(env: &GridWorld) -> Dataset {
        let mut episodes = Vec::new();
        for &cell in env.free_cells() {
            for a in GridAction::ALL {
                let next = env.step(cell, a);
                episodes.push(vec![Transition {
                    state: env.observe(cell),
                    action: vec![a.index() as f64],
                    next_state: env.observe(next),
                    done: true,
                }]);
            }
        }
        Dataset {
            meta: DatasetMeta {
                env_id: "fourroom13-onehot".into(),
                obs_dim: env.obs_dim(),
                action_dim: 4,
                action_kind: ActionKind::Discrete,
                policy: "exhaustive".into(),
                seed: 0,
            },
            episodes,
        }
    }

    /// 3x3 open gridworld keeps the identity-encoder test quick.
    fn small_env() -> GridWorld {
        GridWorld::from_map(&["#####", "#   #", "#   #", "#   #", "#####"], GridObs::OneHotSphere)
            .unwrap()
    }

    #[test]
    fn identity_abstraction_gives_zero_lhs_and_zero_dynamics_loss() {
        let env = small_env();
        let enc = identity_encoder(&env);
        let mdp = TabularMdp::from_gridworld(&env, 0.9).unwrap();
        let pi = TabularPolicy::uniform(mdp.n_states, 4);
        let data = exhaustive_dataset(&env);
        let obs = observations(&env);
        let report = lemma_bound_report(&enc, &mdp, &pi, &obs, &data).unwrap();
        assert_eq!(report.n_latent_states, mdp.n_states);
        assert_eq!(report.lhs, 0.0);
        assert!(report.loss_dynamics < 1e-10, "L_d = {}", report.loss_dynamics);
        assert!(report.lhs <= report.rhs);
    }

    #[test]
    fn collapsed_encoder_has_positive_lhs() {
        // constant phi on a 2-state MDP with distinct dynamics
        let mut params = ParamStore::new();
        params.insert("phi.w0", Tensor::matrix(2, 2, vec![0.0; 4]).unwrap()).unwrap();
        params.insert("phi.b0", Tensor::new(vec![2], vec![1.0, 0.5]).unwrap()).unwrap();
        params.insert("aproj.w0", Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        params.insert("aproj.b0", Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        params.insert("g.w0", Tensor::matrix(3, 2, vec![0.0; 6]).unwrap()).unwrap();
        params.insert("g.b0", Tensor::new(vec![2], vec![0.0; 2]).unwrap()).unwrap();
        params.insert("wmap.w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let target = hard_copy_targets(&params);
        let enc = EncoderParams {
            obs_dim: 2,
            action_input_dim: 1,
            d: 2,
            horizon: 1,
            lambda: 0.0,
            method: ReprMethod::Rldp,
            phi_spec: MlpSpec::relu(vec![2, 2], OutputTransform::Sphere),
            aproj_spec: MlpSpec::relu(vec![1, 1], OutputTransform::None),
            g_spec: MlpSpec::relu(vec![3, 2], OutputTransform::None),
            params,
            target,
        };
        // state 0 -> 0, state 1 -> 1 (distinct absorbing dynamics)
        let mdp = TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.5, 0.5], 0.9).unwrap();
        let pi = TabularPolicy::uniform(2, 1);
        let obs = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let data = Dataset {
            meta: DatasetMeta {
                env_id: "two".into(),
                obs_dim: 2,
                action_dim: 1,
                action_kind: ActionKind::Continuous,
                policy: "fixture".into(),
                seed: 0,
            },
            episodes: vec![
                vec![Transition {
                    state: vec![1.0, 0.0],
                    action: vec![0.0],
                    next_state: vec![1.0, 0.0],
                    done: true,
                }],
                vec![Transition {
                    state: vec![0.0, 1.0],
                    action: vec![0.0],
                    next_state: vec![0.0, 1.0],
                    done: true,
                }],
            ],
        };
        let report = lemma_bound_report(&enc, &mdp, &pi, &obs, &data).unwrap();
        assert_eq!(report.n_latent_states, 1);
        assert!(report.lhs > 0.0);
    }

    fn observations(env: &GridWorld) -> Tensor {
        let n = env.n_free();
        let mut vals = Vec::with_capacity(n * env.obs_dim());
        for &cell in env.free_cells() {
            vals.extend_from_slice(&env.observe(cell));
        }
        Tensor::matrix(n, env.obs_dim(), vals).unwrap()
    }
}
