//! Representation pretraining: regularized latent dynamics prediction, the
//! Laplacian and random-feature baselines, and the feature-collapse
//! diagnostic.
//!
//! The encoder family is: state encoder `phi` (MLP, sphere output), action
//! projector `A` (linear), dynamics head `g` (MLP), linear map `w`, and a
//! periodically hard-copied target encoder `phi_bar`. The predicted next
//! latent is `SN(w(g(concat(h, A(a)))))`, with the final spherical
//! normalization dropped by the `rldp_no_sn` ablation.

mod losses;
mod train;

pub use losses::{loss_dynamics, loss_laplacian, loss_ortho, loss_rldp, PairBatch, SegmentBatch};
pub use train::{probe_states, train_representation, CollapseTrace};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    forward_mlp, forward_mlp_eager, hard_copy_targets, init_mlp_params, Checkpoint, Graph,
    MlpSpec, OutputTransform, ParamStore, Tensor, Var,
};
use crate::envs::ActionKind;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprMethod {
    Rldp,
    /// Spherical normalization removed from the dynamics-head output;
    /// phi keeps its sphere projection.
    RldpNoSn,
    Laplacian,
    /// Randomly initialized encoder, zero training steps.
    Random,
}

impl ReprMethod {
    pub fn id(&self) -> &'static str {
        match self {
            ReprMethod::Rldp => "rldp",
            ReprMethod::RldpNoSn => "rldp_no_sn",
            ReprMethod::Laplacian => "laplacian",
            ReprMethod::Random => "random",
        }
    }

    pub fn from_id(s: &str) -> Result<Self> {
        match s {
            "rldp" => Ok(ReprMethod::Rldp),
            "rldp_no_sn" => Ok(ReprMethod::RldpNoSn),
            "laplacian" => Ok(ReprMethod::Laplacian),
            "random" => Ok(ReprMethod::Random),
            other => Err(Error::InvalidArgument { context: format!("unknown repr method `{other}`") }),
        }
    }
}

/// Pretraining configuration. The architecture defaults follow the reference
/// description (phi: 2x256 hidden; g: 2x512 hidden; A -> 256); the desk-scale
/// configs shipped with the CLI use smaller widths.
///
/// `seed` is never read from config files: the CLI derives it from the root
/// seed, so a stray `seed` key under `[repr]` is rejected as unknown.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprConfig {
    pub d: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub target_update_period: usize,
    pub method: ReprMethod,
    /// Laplacian penalty weight.
    pub beta: f64,
    pub learning_rate: f64,
    pub batch: usize,
    pub total_steps: usize,
    #[serde(skip)]
    pub seed: u64,
    pub phi_hidden: Vec<usize>,
    pub g_hidden: Vec<usize>,
    pub action_embed: usize,
}

impl Default for ReprConfig {
    fn default() -> Self {
        ReprConfig {
            d: 64,
            horizon: 5,
            lambda: 1.0,
            target_update_period: 1000,
            method: ReprMethod::Rldp,
            beta: 1.0,
            learning_rate: 1e-4,
            batch: 256,
            total_steps: 20_000,
            seed: 0,
            phi_hidden: vec![256, 256],
            g_hidden: vec![512, 512],
            action_embed: 256,
        }
    }
}

impl ReprConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Config { detail: "repr.d must be >= 2".into() });
        }
        if self.horizon < 1 {
            return Err(Error::Config { detail: "repr.horizon must be >= 1".into() });
        }
        if self.lambda < 0.0 {
            return Err(Error::Config { detail: "repr.lambda must be >= 0".into() });
        }
        if self.target_update_period < 1 {
            return Err(Error::Config { detail: "repr.target_update_period must be >= 1".into() });
        }
        if self.batch < 2 {
            return Err(Error::Config { detail: "repr.batch must be >= 2".into() });
        }
        Ok(())
    }
}

/// Encoder parameters plus the frozen target copy of phi.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub obs_dim: usize,
    /// Width of the action vector fed to A (one-hot width for discrete).
    pub action_input_dim: usize,
    pub d: usize,
    pub horizon: usize,
    pub lambda: f64,
    pub method: ReprMethod,
    pub phi_spec: MlpSpec,
    pub aproj_spec: MlpSpec,
    pub g_spec: MlpSpec,
    pub params: ParamStore,
    pub target: ParamStore,
}

/// Width of the action vector an encoder or critic consumes.
pub fn action_input_dim(kind: ActionKind, action_dim: usize) -> usize {
    match kind {
        ActionKind::Discrete => action_dim,
        ActionKind::Continuous => action_dim,
    }
}

/// One-hot encode stored actions when the dataset is discrete; pass
/// continuous actions through.
pub fn actions_to_input(
    kind: ActionKind,
    action_dim: usize,
    raw: &[f64],
    raw_width: usize,
    batch: usize,
) -> Tensor {
    match kind {
        ActionKind::Discrete => {
            let scale = std::env::var("RLDP_ACTION_SCALE")
                .ok()
                .and_then(|s| s.parse::<f64>().ok())
                .unwrap_or(1.0);
            let mut out = vec![0.0; batch * action_dim];
            for i in 0..batch {
                let idx = raw[i * raw_width] as usize;
                out[i * action_dim + idx.min(action_dim - 1)] = scale;
            }
            Tensor::matrix(batch, action_dim, out).expect("shape by construction")
        }
        ActionKind::Continuous => {
            Tensor::matrix(batch, raw_width, raw.to_vec()).expect("shape by construction")
        }
    }
}

impl EncoderParams {
    pub fn init(
        config: &ReprConfig,
        obs_dim: usize,
        action_input_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let mut phi_widths = vec![obs_dim];
        phi_widths.extend_from_slice(&config.phi_hidden);
        phi_widths.push(config.d);
        let phi_spec = MlpSpec::relu(phi_widths, OutputTransform::Sphere);

        let aproj_spec = MlpSpec::relu(vec![action_input_dim, config.action_embed], OutputTransform::None);

        let mut g_widths = vec![config.d + config.action_embed];
        g_widths.extend_from_slice(&config.g_hidden);
        g_widths.push(config.d);
        let g_spec = MlpSpec::relu(g_widths, OutputTransform::None);

        let mut params = ParamStore::new();
        init_mlp_params(&phi_spec, "phi", &mut params, rng)?;
        init_mlp_params(&aproj_spec, "aproj", &mut params, rng)?;
        init_mlp_params(&g_spec, "g", &mut params, rng)?;
        let bound = 1.0 / (config.d as f64).sqrt();
        let w: Vec<f64> = (0..config.d * config.d).map(|_| rng.random_range(-bound..bound)).collect();
        params.insert("wmap.w", Tensor::matrix(config.d, config.d, w)?)?;

        let target = hard_copy_targets(&params);
        Ok(EncoderParams {
            obs_dim,
            action_input_dim,
            d: config.d,
            horizon: config.horizon,
            lambda: config.lambda,
            method: config.method,
            phi_spec,
            aproj_spec,
            g_spec,
            params,
            target,
        })
    }

    /// Whether predicted next latents get the final sphere projection.
    pub fn sn_on_g(&self) -> bool {
        !matches!(self.method, ReprMethod::RldpNoSn)
    }

    pub fn refresh_target(&mut self) {
        self.target = hard_copy_targets(&self.params);
    }

    /// Eager phi(s): rows on the radius-sqrt(d) hypersphere.
    pub fn encode(&self, states: &Tensor) -> Result<Tensor> {
        forward_mlp_eager(&self.phi_spec, &self.params, "phi", states)
    }

    /// Eager target-encoder phi_bar(s).
    pub fn encode_target(&self, states: &Tensor) -> Result<Tensor> {
        forward_mlp_eager(&self.phi_spec, &self.target, "phi", states)
    }

    /// Taped phi(s) with trainable weights.
    pub fn encode_taped(&self, graph: &mut Graph, states: Var) -> Result<Var> {
        forward_mlp(graph, &self.phi_spec, &self.params, "phi", true, states)
    }

    /// Taped single latent step: SN?(w(g(concat(h, A(a))))).
    pub fn latent_step_taped(&self, graph: &mut Graph, h: Var, actions: Var) -> Result<Var> {
        let a_emb = forward_mlp(graph, &self.aproj_spec, &self.params, "aproj", true, actions)?;
        let joint = graph.concat_cols(h, a_emb)?;
        let g_out = forward_mlp(graph, &self.g_spec, &self.params, "g", true, joint)?;
        let w = graph.param("wmap.w", self.params.get("wmap.w")?);
        let pred = graph.matmul(g_out, w)?;
        Ok(if self.sn_on_g() { graph.sphere_rows(pred) } else { pred })
    }

    /// Eager single latent step.
    pub fn latent_step(&self, h: &Tensor, actions: &Tensor) -> Result<Tensor> {
        let a_emb = forward_mlp_eager(&self.aproj_spec, &self.params, "aproj", actions)?;
        let mut joint = Vec::with_capacity(h.rows() * (h.cols() + a_emb.cols()));
        for i in 0..h.rows() {
            joint.extend_from_slice(h.row(i));
            joint.extend_from_slice(a_emb.row(i));
        }
        let joint = Tensor::matrix(h.rows(), h.cols() + a_emb.cols(), joint)?;
        let g_out = forward_mlp_eager(&self.g_spec, &self.params, "g", &joint)?;
        let w = self.params.get("wmap.w")?;
        let pred = Tensor::matrix(
            g_out.rows(),
            w.cols(),
            crate::autodiff::kernels::matmul(g_out.values(), w.values(), g_out.rows(), w.rows(), w.cols()),
        )?;
        Ok(if self.sn_on_g() { crate::autodiff::sphere_project(&pred) } else { pred })
    }

    /// Eager latent rollout h_1..h_H from s_0 under the given action sequence.
    pub fn rollout_latent(&self, s0: &Tensor, actions: &[Tensor]) -> Result<Vec<Tensor>> {
        if actions.is_empty() {
            return Err(Error::InvalidArgument { context: "rollout needs at least one action".into() });
        }
        let mut h = self.encode(s0)?;
        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            h = self.latent_step(&h, a)?;
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        let widths = |s: &MlpSpec| {
            s.layer_widths.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        };
        ck.meta.push(("kind".into(), "encoder".into()));
        ck.meta.push(("method".into(), self.method.id().into()));
        ck.meta.push(("obs_dim".into(), self.obs_dim.to_string()));
        ck.meta.push(("action_input_dim".into(), self.action_input_dim.to_string()));
        ck.meta.push(("d".into(), self.d.to_string()));
        ck.meta.push(("horizon".into(), self.horizon.to_string()));
        ck.meta.push(("lambda".into(), format!("{:e}", self.lambda)));
        ck.meta.push(("phi_widths".into(), widths(&self.phi_spec)));
        ck.meta.push(("aproj_widths".into(), widths(&self.aproj_spec)));
        ck.meta.push(("g_widths".into(), widths(&self.g_spec)));
        ck.sections.insert("params".into(), self.params.clone());
        ck.sections.insert("target".into(), self.target.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = |key: &str| {
            ck.meta_value(key)
                .ok_or_else(|| Error::Format {
                    path: "checkpoint".into(),
                    offset: None,
                    detail: format!("missing meta `{key}`"),
                })
                .map(str::to_string)
        };
        let parse_widths = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|t| {
                    t.parse::<usize>().map_err(|_| Error::Format {
                        path: "checkpoint".into(),
                        offset: None,
                        detail: format!("bad width `{t}`"),
                    })
                })
                .collect()
        };
        let phi_spec = MlpSpec::relu(parse_widths(&meta("phi_widths")?)?, OutputTransform::Sphere);
        let aproj_spec = MlpSpec::relu(parse_widths(&meta("aproj_widths")?)?, OutputTransform::None);
        let g_spec = MlpSpec::relu(parse_widths(&meta("g_widths")?)?, OutputTransform::None);
        let parse = |s: String| {
            s.parse::<usize>().map_err(|_| Error::Format {
                path: "checkpoint".into(),
                offset: None,
                detail: format!("bad integer `{s}`"),
            })
        };
        Ok(EncoderParams {
            obs_dim: parse(meta("obs_dim")?)?,
            action_input_dim: parse(meta("action_input_dim")?)?,
            d: parse(meta("d")?)?,
            horizon: parse(meta("horizon")?)?,
            lambda: meta("lambda")?.parse::<f64>().map_err(|_| Error::Format {
                path: "checkpoint".into(),
                offset: None,
                detail: "bad lambda".into(),
            })?,
            method: ReprMethod::from_id(&meta("method")?)?,
            phi_spec,
            aproj_spec,
            g_spec,
            params: ck.section("params")?.clone(),
            target: ck.section("target")?.clone(),
        })
    }
}

/// Mean cosine similarity over unordered distinct pairs of embedding rows.
pub fn cosine_similarity_mean(embeddings: &Tensor) -> Result<f64> {
    let b = embeddings.rows();
    if b < 2 {
        return Err(Error::InvalidArgument { context: "cosine_similarity_mean needs batch >= 2".into() });
    }
    let d = embeddings.cols();
    let mut normalized = embeddings.values().to_vec();
    for row in normalized.chunks_mut(d) {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        for v in row.iter_mut() {
            *v /= norm;
        }
    }
    let gram = crate::autodiff::kernels::matmul_nt(&normalized, &normalized, b, d, b);
    let mut sum = 0.0;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                sum += gram[i * b + j];
            }
        }
    }
    Ok(sum / (b * (b - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ReprConfig {
        ReprConfig {
            d: 4,
            horizon: 3,
            lambda: 1.0,
            phi_hidden: vec![8],
            g_hidden: vec![8],
            action_embed: 4,
            batch: 4,
            ..ReprConfig::default()
        }
    }

    fn small_encoder(seed: u64) -> EncoderParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        EncoderParams::init(&small_config(), 6, 3, &mut rng).unwrap()
    }

    #[test]
    fn encode_is_deterministic_and_on_sphere() {
        let enc = small_encoder(1);
        let enc2 = small_encoder(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let states =
            Tensor::matrix(5, 6, (0..30).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = enc.encode(&states).unwrap();
        let b = enc2.encode(&states).unwrap();
        assert_eq!(a.values(), b.values());
        for i in 0..a.rows() {
            let norm: f64 = a.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-10); // sqrt(4)
        }
    }

    #[test]
    fn batch_encode_equals_row_stack_of_single_encodes() {
        let enc = small_encoder(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let states =
            Tensor::matrix(7, 6, (0..42).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let batch = enc.encode(&states).unwrap();
        for i in 0..7 {
            let single =
                enc.encode(&Tensor::matrix(1, 6, states.row(i).to_vec()).unwrap()).unwrap();
            for (a, b) in batch.row(i).iter().zip(single.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rollout_h1_is_single_latent_step_and_norms_hold() {
        let enc = small_encoder(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s0 = Tensor::matrix(3, 6, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let a0 = Tensor::matrix(3, 3, (0..9).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let rolled = enc.rollout_latent(&s0, std::slice::from_ref(&a0)).unwrap();
        assert_eq!(rolled.len(), 1);
        let manual = enc.latent_step(&enc.encode(&s0).unwrap(), &a0).unwrap();
        assert_eq!(rolled[0].values(), manual.values());
        for i in 0..3 {
            let norm: f64 = rolled[0].row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn rollout_composes_like_manual_chaining() {
        let enc = small_encoder(7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s0 = Tensor::matrix(2, 6, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let actions: Vec<Tensor> = (0..3)
            .map(|_| {
                Tensor::matrix(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .unwrap()
            })
            .collect();
        let rolled = enc.rollout_latent(&s0, &actions).unwrap();
        let mut h = enc.encode(&s0).unwrap();
        for (t, a) in actions.iter().enumerate() {
            h = enc.latent_step(&h, a).unwrap();
            for (x, y) in h.values().iter().zip(rolled[t].values()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_sn_ablation_keeps_phi_on_sphere_but_not_g() {
        let mut cfg = small_config();
        cfg.method = ReprMethod::RldpNoSn;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = EncoderParams::init(&cfg, 6, 3, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(10);
        let s0 = Tensor::matrix(4, 6, (0..24).map(|_| rng2.random_range(-1.0..1.0)).collect())
            .unwrap();
        let a0 = Tensor::matrix(4, 3, (0..12).map(|_| rng2.random_range(-1.0..1.0)).collect())
            .unwrap();
        let phi = enc.encode(&s0).unwrap();
        for i in 0..4 {
            let norm: f64 = phi.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 2.0).abs() < 1e-10);
        }
        let h1 = enc.latent_step(&phi, &a0).unwrap();
        let some_off_sphere = (0..4).any(|i| {
            let norm: f64 = h1.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            (norm - 2.0).abs() > 1e-6
        });
        assert!(some_off_sphere, "no-SN rollout unexpectedly landed on the sphere");
    }

    #[test]
    fn cosine_mean_examples() {
        // two identical vectors -> 1
        let t = Tensor::matrix(2, 2, vec![1.0, 2.0, 1.0, 2.0]).unwrap();
        assert!((cosine_similarity_mean(&t).unwrap() - 1.0).abs() < 1e-12);
        // e1, e2 -> 0
        let t = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(cosine_similarity_mean(&t).unwrap().abs() < 1e-12);
        // batch of 5 random vectors matches the pairwise double loop
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let t = Tensor::matrix(5, 3, vals.clone()).unwrap();
        let mut acc = 0.0;
        let mut count = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i == j {
                    continue;
                }
                let a = &vals[i * 3..(i + 1) * 3];
                let b = &vals[j * 3..(j + 1) * 3];
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
                acc += dot / (na * nb);
                count += 1.0;
            }
        }
        assert!((cosine_similarity_mean(&t).unwrap() - acc / count).abs() < 1e-12);
        // batch < 2 errors
        assert!(cosine_similarity_mean(&Tensor::matrix(1, 3, vec![1.0, 0.0, 0.0]).unwrap())
            .is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_structure() {
        let enc = small_encoder(12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        enc.to_checkpoint().save(&path).unwrap();
        let loaded = EncoderParams::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(loaded.d, enc.d);
        assert_eq!(loaded.method, enc.method);
        assert_eq!(loaded.phi_spec, enc.phi_spec);
        let names_a: Vec<_> = enc.params.names().collect();
        let names_b: Vec<_> = loaded.params.names().collect();
        assert_eq!(names_a, names_b);
    }
}
