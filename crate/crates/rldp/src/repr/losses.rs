//! Pretraining losses built on the tape.
//!
//! The dynamics loss is the per-step sum of squared distances between the
//! unrolled predicted latents and the target-encoded true next states,
//! averaged over the batch; the target branch is computed eagerly from the
//! frozen copy of phi, so no gradient reaches it.

use crate::autodiff::{Graph, Tensor, Var};
use crate::envs::{ActionKind, Segment};
use crate::{Error, Result};

use super::{actions_to_input, EncoderParams};

/// A segment batch as dense tensors: states[t] is [B x obs], actions[t] is
/// [B x action_input_dim].
#[derive(Debug, Clone)]
pub struct SegmentBatch {
    pub states: Vec<Tensor>,
    pub actions: Vec<Tensor>,
}

impl SegmentBatch {
    pub fn from_segments(
        segments: &[Segment],
        kind: ActionKind,
        action_dim: usize,
    ) -> Result<Self> {
        let b = segments.len();
        if b == 0 {
            return Err(Error::InvalidArgument { context: "empty segment batch".into() });
        }
        let h = segments[0].horizon();
        let obs_dim = segments[0].states[0].len();
        let raw_width = segments[0].actions[0].len();
        let mut states = Vec::with_capacity(h + 1);
        for t in 0..=h {
            let mut vals = Vec::with_capacity(b * obs_dim);
            for seg in segments {
                vals.extend_from_slice(&seg.states[t]);
            }
            states.push(Tensor::matrix(b, obs_dim, vals)?);
        }
        let mut actions = Vec::with_capacity(h);
        for t in 0..h {
            let mut raw = Vec::with_capacity(b * raw_width);
            for seg in segments {
                raw.extend_from_slice(&seg.actions[t]);
            }
            actions.push(actions_to_input(kind, action_dim, &raw, raw_width, b));
        }
        Ok(SegmentBatch { states, actions })
    }

    pub fn batch(&self) -> usize {
        self.states[0].rows()
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Consecutive (s, s') pairs for the Laplacian baseline.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub s: Tensor,
    pub s_next: Tensor,
}

/// Unrolled latent dynamics prediction:
/// mean over the batch of sum_t ||h_{t+1} - phi_bar(s_{t+1})||^2.
pub fn loss_dynamics(graph: &mut Graph, enc: &EncoderParams, batch: &SegmentBatch) -> Result<Var> {
    let b = batch.batch();
    let horizon = batch.horizon();
    let mut h = {
        let s0 = graph.constant(batch.states[0].clone());
        enc.encode_taped(graph, s0)?
    };
    let mut total: Option<Var> = None;
    for t in 0..horizon {
        let a = graph.constant(batch.actions[t].clone());
        h = enc.latent_step_taped(graph, h, a)?;
        let target = enc.encode_target(&batch.states[t + 1])?;
        let target = graph.constant(target);
        let diff = graph.sub(h, target)?;
        let sq = graph.mul(diff, diff)?;
        let step_sum = graph.sum_all(sq);
        total = Some(match total {
            Some(acc) => graph.add(acc, step_sum)?,
            None => step_sum,
        });
    }
    Ok(graph.scale(total.expect("horizon >= 1"), 1.0 / b as f64))
}

/// Orthogonality regularizer: mean off-diagonal entry of the batch Gram
/// matrix phi phi^T. The diagonal is excluded; with sphere outputs it is the
/// constant d and would only inject a spurious gradient through the
/// normalization.
pub fn loss_ortho(graph: &mut Graph, enc: &EncoderParams, states: &Tensor) -> Result<Var> {
    if states.rows() < 2 {
        return Err(Error::InvalidArgument { context: "loss_ortho needs batch >= 2".into() });
    }
    let s = graph.constant(states.clone());
    let phi = enc.encode_taped(graph, s)?;
    let gram = graph.matmul_nt(phi, phi)?;
    graph.offdiag_mean(gram)
}

/// Combined objective: dynamics prediction plus lambda times the
/// orthogonality regularizer (computed on the segment start states).
/// lambda = 0 reduces exactly to the dynamics loss.
pub fn loss_rldp(
    graph: &mut Graph,
    enc: &EncoderParams,
    batch: &SegmentBatch,
    lambda: f64,
) -> Result<Var> {
    let ld = loss_dynamics(graph, enc, batch)?;
    if lambda == 0.0 {
        return Ok(ld);
    }
    let lr = loss_ortho(graph, enc, &batch.states[0])?;
    let scaled = graph.scale(lr, lambda);
    graph.add(ld, scaled)
}

/// Graph-Laplacian baseline:
/// 1/2 E||phi(s) - phi(s')||^2 over consecutive pairs, plus beta times the
/// off-diagonal Gram mean over the (independently drawn) s batch.
pub fn loss_laplacian(
    graph: &mut Graph,
    enc: &EncoderParams,
    pairs: &PairBatch,
    beta: f64,
) -> Result<Var> {
    let b = pairs.s.rows();
    if b < 2 {
        return Err(Error::InvalidArgument { context: "loss_laplacian needs batch >= 2".into() });
    }
    let s = graph.constant(pairs.s.clone());
    let sp = graph.constant(pairs.s_next.clone());
    let phi_s = enc.encode_taped(graph, s)?;
    let phi_sp = enc.encode_taped(graph, sp)?;
    let diff = graph.sub(phi_s, phi_sp)?;
    let sq = graph.mul(diff, diff)?;
    let pull = graph.sum_all(sq);
    let pull = graph.scale(pull, 0.5 / b as f64);
    let gram = graph.matmul_nt(phi_s, phi_s)?;
    let push = graph.offdiag_mean(gram)?;
    let push = graph.scale(push, beta);
    graph.add(pull, push)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{hard_copy_targets, MlpSpec, OutputTransform, ParamStore};
    use crate::envs::Segment;
    use crate::repr::ReprMethod;

    /// Encoder with phi = identity (2 -> 2, sphere), A = 0, and g/w crafted
    /// so the predicted next latent equals the current latent exactly.
    fn copying_encoder() -> EncoderParams {
        let mut params = ParamStore::new();
        // phi: single linear layer, identity weights, sphere output
        params.insert("phi.w0", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        params.insert("phi.b0", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()).unwrap();
        // A: 1 -> 1, zero map
        params.insert("aproj.w0", Tensor::matrix(1, 1, vec![0.0]).unwrap()).unwrap();
        params.insert("aproj.b0", Tensor::new(vec![1], vec![0.0]).unwrap()).unwrap();
        // g: copy h through relu(x) - relu(-x); input (h0, h1, a)
        #[rustfmt::skip]
        let g_w0 = vec![
            1.0, -1.0, 0.0, 0.0,
            0.0, 0.0, 1.0, -1.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        #[rustfmt::skip]
        let g_w1 = vec![
            1.0, 0.0,
            -1.0, 0.0,
            0.0, 1.0,
            0.0, -1.0,
        ];
        params.insert("g.w0", Tensor::matrix(3, 4, g_w0).unwrap()).unwrap();
        params.insert("g.b0", Tensor::new(vec![4], vec![0.0; 4]).unwrap()).unwrap();
        params.insert("g.w1", Tensor::matrix(4, 2, g_w1).unwrap()).unwrap();
        params.insert("g.b1", Tensor::new(vec![2], vec![0.0, 0.0]).unwrap()).unwrap();
        params.insert("wmap.w", Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let target = hard_copy_targets(&params);
        EncoderParams {
            obs_dim: 2,
            action_input_dim: 1,
            d: 2,
            horizon: 1,
            lambda: 1.0,
            method: ReprMethod::Rldp,
            phi_spec: MlpSpec::relu(vec![2, 2], OutputTransform::Sphere),
            aproj_spec: MlpSpec::relu(vec![1, 1], OutputTransform::None),
            g_spec: MlpSpec::relu(vec![3, 4, 2], OutputTransform::None),
            params,
            target,
        }
    }

    fn segment_batch(pairs: &[(Vec<f64>, Vec<f64>)]) -> SegmentBatch {
        let segs: Vec<Segment> = pairs
            .iter()
            .map(|(s0, s1)| Segment {
                states: vec![s0.clone(), s1.clone()],
                actions: vec![vec![0.0]],
            })
            .collect();
        SegmentBatch::from_segments(&segs, ActionKind::Continuous, 1).unwrap()
    }

    const R2: f64 = std::f64::consts::SQRT_2;

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // self-loop transition: the crafted g predicts h0, and s1 = s0
        let enc = copying_encoder();
        let batch = segment_batch(&[(vec![R2, 0.0], vec![R2, 0.0])]);
        let mut g = Graph::new();
        let loss = loss_dynamics(&mut g, &enc, &batch).unwrap();
        assert!(g.value(loss).item() < 1e-25, "loss {}", g.value(loss).item());
    }

    #[test]
    fn single_segment_matches_hand_arithmetic() {
        // prediction stays at phi(s0) = [sqrt2, 0], target phi_bar(s1) = [0, sqrt2]
        // -> || [sqrt2, -sqrt2] ||^2 = 4
        let enc = copying_encoder();
        let batch = segment_batch(&[(vec![R2, 0.0], vec![0.0, R2])]);
        let mut g = Graph::new();
        let loss = loss_dynamics(&mut g, &enc, &batch).unwrap();
        assert!((g.value(loss).item() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn target_branch_gets_no_gradient() {
        let mut enc = copying_encoder();
        let batch = segment_batch(&[(vec![R2, 0.0], vec![0.0, R2]), (vec![0.0, R2], vec![R2, 0.0])]);
        let mut g = Graph::new();
        let loss = loss_rldp(&mut g, &enc, &batch, 1.0).unwrap();
        let mut params = enc.params.clone();
        g.backward(loss, &mut params).unwrap();
        for (_, t) in params.iter() {
            assert!(t.grad().is_some());
        }
        // the target store was never registered on the tape
        for (_, t) in enc.target.iter_mut() {
            assert!(t.grad().is_none());
        }
    }

    #[test]
    fn ortho_orthogonal_pair_is_zero_and_identical_pair_is_d() {
        let enc = copying_encoder();
        let mut g = Graph::new();
        let states = Tensor::matrix(2, 2, vec![R2, 0.0, 0.0, R2]).unwrap();
        let l = loss_ortho(&mut g, &enc, &states).unwrap();
        assert!(g.value(l).item().abs() < 1e-12);

        let mut g2 = Graph::new();
        let same = Tensor::matrix(2, 2, vec![R2, 0.0, R2, 0.0]).unwrap();
        let l2 = loss_ortho(&mut g2, &enc, &same).unwrap();
        assert!((g2.value(l2).item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ortho_matches_pairwise_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let enc = copying_encoder();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let states = Tensor::matrix(8, 2, vals).unwrap();
        let phi = enc.encode(&states).unwrap();
        let mut acc = 0.0;
        for i in 0..8 {
            for j in 0..8 {
                if i != j {
                    let dot: f64 =
                        phi.row(i).iter().zip(phi.row(j)).map(|(a, b)| a * b).sum();
                    acc += dot;
                }
            }
        }
        let expected = acc / 56.0;
        let mut g = Graph::new();
        let l = loss_ortho(&mut g, &enc, &states).unwrap();
        assert!((g.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn rldp_reduces_to_dynamics_at_lambda_zero_and_sums_at_one() {
        let enc = copying_encoder();
        let batch = segment_batch(&[(vec![R2, 0.0], vec![0.0, R2]), (vec![0.0, R2], vec![R2, 0.0])]);
        let mut g = Graph::new();
        let ld = loss_dynamics(&mut g, &enc, &batch).unwrap();
        let l0 = loss_rldp(&mut g, &enc, &batch, 0.0).unwrap();
        assert_eq!(g.value(ld).item(), g.value(l0).item());

        let mut g2 = Graph::new();
        let lo = loss_ortho(&mut g2, &enc, &batch.states[0]).unwrap();
        let l1 = loss_rldp(&mut g2, &enc, &batch, 1.0).unwrap();
        let expected = g.value(ld).item() + g2.value(lo).item();
        assert!((g2.value(l1).item() - expected).abs() < 1e-14);
    }

    #[test]
    fn laplacian_examples() {
        // constant phi: zero weights, bias shifts every state to the same
        // pre-sphere point
        let mut enc = copying_encoder();
        *enc.params.get_mut("phi.w0").unwrap() = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        *enc.params.get_mut("phi.b0").unwrap() = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        let pairs = PairBatch {
            s: Tensor::matrix(2, 2, vec![R2, 0.0, 0.0, R2]).unwrap(),
            s_next: Tensor::matrix(2, 2, vec![0.0, R2, R2, 0.0]).unwrap(),
        };
        let mut g = Graph::new();
        let l = loss_laplacian(&mut g, &enc, &pairs, 0.5).unwrap();
        // first term 0, second term beta * d = 0.5 * 2
        assert!((g.value(l).item() - 1.0).abs() < 1e-12);

        // beta = 0 with phi(s) = phi(s') -> 0
        let enc_id = copying_encoder();
        let same = PairBatch {
            s: Tensor::matrix(2, 2, vec![R2, 0.0, 0.0, R2]).unwrap(),
            s_next: Tensor::matrix(2, 2, vec![R2, 0.0, 0.0, R2]).unwrap(),
        };
        let mut g2 = Graph::new();
        let l2 = loss_laplacian(&mut g2, &enc_id, &same, 0.0).unwrap();
        assert!(g2.value(l2).item().abs() < 1e-25);
    }

    #[test]
    fn laplacian_hand_batch() {
        // identity encoder, pairs: ([r2,0] -> [0,r2]) and ([0,r2] -> [0,r2])
        // pull = 1/2 * mean(4, 0) = 1; push = beta * (phi_s1 . phi_s2) = 0
        let enc = copying_encoder();
        let pairs = PairBatch {
            s: Tensor::matrix(2, 2, vec![R2, 0.0, 0.0, R2]).unwrap(),
            s_next: Tensor::matrix(2, 2, vec![0.0, R2, 0.0, R2]).unwrap(),
        };
        let mut g = Graph::new();
        let l = loss_laplacian(&mut g, &enc, &pairs, 1.0).unwrap();
        assert!((g.value(l).item() - 1.0).abs() < 1e-12);
    }
}
