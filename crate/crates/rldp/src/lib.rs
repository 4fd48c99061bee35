//! Zero-shot reinforcement learning at desk scale.
//!
//! Pipeline: pretrain state features by regularized latent next-state
//! prediction on a reward-free offline dataset, train a successor-feature
//! critic and task-conditioned policy on top of the frozen features, then
//! serve any reward function at test time by inferring its task embedding —
//! no further training. Exact tabular dynamic-programming oracles verify
//! every learned quantity.
//!
//! Modules:
//! - [`autodiff`]: f64 reverse-mode tape, MLPs, hypersphere projection, Adam.
//! - [`envs`]: four-room gridworld, pointmass, reward-free datasets, samplers.
//! - [`repr`]: representation pretraining losses and the collapse diagnostic.
//! - [`bfm`]: successor-feature critic and actor training on frozen features.
//! - [`zeroshot`]: reward -> task-embedding inference, evaluation, heatmaps.
//! - [`oracle`]: exact successor measures, value iteration, bound reports.
//! - [`cli`]: batch subcommands wiring the pipeline together.

pub mod autodiff;
pub mod bfm;
pub mod cli;
pub mod config;
pub mod envs;
mod error;
pub mod fsutil;
pub mod oracle;
pub mod repr;
pub mod seeding;
pub mod zeroshot;

pub use error::{Error, Result};
