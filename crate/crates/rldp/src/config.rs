//! Run configuration: a single TOML document with strict parsing. Any
//! unknown key aborts with the key named in the error.
//!
//! All randomness flows from the root seed in `[env]`: every pipeline stage
//! derives its own stream as splitmix64(root ^ fnv1a64(stage_name)), so
//! per-stage `seed` keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bfm::BfmConfig;
use crate::envs::{GenPolicy, GridObs};
use crate::repr::ReprConfig;
use crate::zeroshot::RewardSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvId {
    Fourroom,
    Pointmass,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub id: EnvId,
    /// Map layout; the only shipped gridworld layout is `fourroom13`.
    #[serde(default = "default_layout")]
    pub layout: String,
    #[serde(default = "default_observation")]
    pub observation: GridObs,
    /// Root seed for the whole pipeline.
    pub seed: u64,
}

fn default_layout() -> String {
    "fourroom13".into()
}

fn default_observation() -> GridObs {
    GridObs::OneHotSphere
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub policy: GenPolicy,
    pub episodes: usize,
    pub episode_len: usize,
    /// Gridworld episode start cell; omit for uniform random starts.
    #[serde(default)]
    pub start: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceRule {
    /// z = (1/N) sum phi(s') r(s')
    Mean,
    /// ridge regression on (Phi, r)
    Regression,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default)]
    pub tasks: Vec<RewardSpec>,
    #[serde(default = "default_eval_episodes")]
    pub episodes: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    /// Sample size for task-embedding inference.
    #[serde(default = "default_inference_n")]
    pub inference_n: usize,
    #[serde(default = "default_rule")]
    pub inference_rule: InferenceRule,
    #[serde(default)]
    pub ridge: f64,
    /// Rescale inferred z to norm sqrt(d), matching the training-time z
    /// distribution. Discrete greedy actions are invariant to the scaling.
    #[serde(default = "default_true")]
    pub rescale_z: bool,
}

fn default_eval_episodes() -> usize {
    50
}

fn default_max_steps() -> usize {
    100
}

fn default_inference_n() -> usize {
    10_000
}

fn default_rule() -> InferenceRule {
    InferenceRule::Mean
}

fn default_true() -> bool {
    true
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tasks: Vec::new(),
            episodes: default_eval_episodes(),
            max_steps: default_max_steps(),
            inference_n: default_inference_n(),
            inference_rule: default_rule(),
            ridge: 0.0,
            rescale_z: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagConfig {
    /// Heatmap start cell s0 and action a0.
    pub heatmap_start: (usize, usize),
    pub heatmap_action: crate::envs::GridAction,
    /// Goal cell whose encoding conditions the goal heatmap.
    pub heatmap_goal: (usize, usize),
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            heatmap_start: (1, 1),
            heatmap_action: crate::envs::GridAction::Right,
            heatmap_goal: (11, 11),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub dataset: PathBuf,
    pub checkpoints: PathBuf,
    pub metrics: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    FrozenFeatures,
    FbJoint,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub repr: ReprConfig,
    #[serde(default)]
    pub bfm: BfmConfig,
    /// frozen_features (default) or fb_joint.
    #[serde(default)]
    pub mode: TrainMode,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub diag: DiagConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config { detail: e.to_string() })?;
        cfg.derive_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Fill the per-stage seeds from the root seed.
    pub fn derive_seeds(&mut self) {
        self.repr.seed = crate::seeding::derive_seed(self.env.seed, "repr");
        self.bfm.seed = crate::seeding::derive_seed(self.env.seed, "bfm");
    }

    /// Override the root seed (CLI `--seed`) and re-derive stage seeds.
    pub fn override_seed(&mut self, seed: u64) {
        self.env.seed = seed;
        self.derive_seeds();
    }

    /// Re-root all paths under `out` (CLI `--out`).
    pub fn reroot(&mut self, out: &Path) {
        for p in [&mut self.paths.dataset, &mut self.paths.checkpoints, &mut self.paths.metrics] {
            if p.is_relative() {
                *p = out.join(&p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.env.id == EnvId::Fourroom && self.env.layout != "fourroom13" {
            return Err(Error::Config {
                detail: format!("unknown gridworld layout `{}`", self.env.layout),
            });
        }
        if self.data.episodes == 0 || self.data.episode_len == 0 {
            return Err(Error::Config {
                detail: "data.episodes and data.episode_len must be > 0".into(),
            });
        }
        self.repr.validate()?;
        self.bfm.validate()?;
        Ok(())
    }

    pub fn data_seed(&self) -> u64 {
        crate::seeding::derive_seed(self.env.seed, "data")
    }

    pub fn eval_seed(&self) -> u64 {
        crate::seeding::derive_seed(self.env.seed, "eval")
    }

    pub fn encoder_checkpoint(&self) -> PathBuf {
        self.paths.checkpoints.join("encoder.ckpt")
    }

    pub fn bfm_checkpoint(&self) -> PathBuf {
        self.paths.checkpoints.join("bfm.ckpt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[env]
id = "fourroom"
seed = 7

[data]
policy = "count_bonus"
episodes = 10
episode_len = 20

[paths]
dataset = "data/fourroom.rds"
checkpoints = "ckpt"
metrics = "metrics"
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(cfg.env.seed, 7);
        assert_eq!(cfg.repr.d, 64);
        assert_eq!(cfg.bfm.gamma, 0.98);
        assert_eq!(cfg.eval.inference_n, 10_000);
        assert!(cfg.eval.rescale_z);
        // stage seeds are derived, not zero
        assert_ne!(cfg.repr.seed, 0);
        assert_ne!(cfg.repr.seed, cfg.bfm.seed);
    }

    #[test]
    fn unknown_keys_are_rejected_with_the_key_named() {
        let bad = MINIMAL.replace("[paths]", "[repr]\nlamda = 1.0\n\n[paths]");
        match RunConfig::parse(&bad) {
            Err(Error::Config { detail }) => assert!(detail.contains("lamda"), "{detail}"),
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn per_stage_seed_keys_are_rejected() {
        let bad = MINIMAL.replace("[paths]", "[bfm]\nseed = 3\n\n[paths]");
        assert!(RunConfig::parse(&bad).is_err());
    }

    #[test]
    fn seed_override_rederives_stage_seeds() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        let before = cfg.repr.seed;
        cfg.override_seed(8);
        assert_ne!(cfg.repr.seed, before);
    }

    #[test]
    fn tasks_parse_as_tagged_tables() {
        let with_tasks = MINIMAL.replace(
            "[paths]",
            "[[eval.tasks]]\nkind = \"goal_cell\"\nx = 11\ny = 11\n\n[paths]",
        );
        let cfg = RunConfig::parse(&with_tasks).unwrap();
        assert_eq!(cfg.eval.tasks, vec![RewardSpec::GoalCell { x: 11, y: 11 }]);
    }

    #[test]
    fn reroot_joins_relative_paths() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.reroot(Path::new("/tmp/run1"));
        assert_eq!(cfg.paths.dataset, Path::new("/tmp/run1/data/fourroom.rds"));
    }
}
