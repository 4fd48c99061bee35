//! Representation pretraining loop with the collapse diagnostic.

use std::path::Path;

use rand::Rng;

use crate::autodiff::{adam_step, AdamState, Graph, Tensor};
use crate::envs::{sample_segments, sample_transitions, Dataset};
use crate::seeding::component_rng;
use crate::{Error, Result};

use super::losses::{loss_laplacian, loss_rldp, PairBatch, SegmentBatch};
use super::{cosine_similarity_mean, EncoderParams, ReprConfig, ReprMethod};

pub const PROBE_BATCH: usize = 256;
pub const TRACE_EVERY: u64 = 500;

/// Mean pairwise cosine similarity of a fixed probe batch, recorded every
/// [`TRACE_EVERY`] steps (and at step 0).
#[derive(Debug, Clone, Default)]
pub struct CollapseTrace {
    pub entries: Vec<(u64, f64)>,
}

impl CollapseTrace {
    pub fn final_value(&self) -> f64 {
        self.entries.last().map(|&(_, v)| v).unwrap_or(f64::NAN)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,mean_cosine\n");
        for (step, value) in &self.entries {
            out.push_str(&format!("{step},{value}\n"));
        }
        crate::fsutil::atomic_write(path, out.as_bytes())
    }
}

/// States used for the collapse diagnostic, fixed at dataset load (seeded) so
/// traces are comparable across methods.
pub fn probe_states(dataset: &Dataset, seed: u64) -> Result<Tensor> {
    let n = dataset.n_transitions();
    if n == 0 {
        return Err(Error::Dataset { context: "cannot probe an empty dataset".into() });
    }
    let mut rng = component_rng(seed, "repr-probe");
    let count = PROBE_BATCH.min(n);
    let obs = dataset.meta.obs_dim;
    let mut vals = Vec::with_capacity(count * obs);
    for _ in 0..count {
        let tr = dataset.transition(rng.random_range(0..n));
        vals.extend_from_slice(&tr.state);
    }
    Tensor::matrix(count, obs, vals)
}

/// Pretrain an encoder on a reward-free dataset.
///
/// `method = random` returns the untrained initialization immediately; the
/// other methods run `total_steps` Adam updates, hard-refresh the target
/// encoder every `target_update_period` steps, and record the cosine trace.
pub fn train_representation(
    config: &ReprConfig,
    dataset: &Dataset,
) -> Result<(EncoderParams, CollapseTrace)> {
    config.validate()?;
    let action_dim = dataset.meta.action_dim;
    let action_input = super::action_input_dim(dataset.meta.action_kind, action_dim);
    let mut init_rng = component_rng(config.seed, "repr-init");
    let mut enc = EncoderParams::init(config, dataset.meta.obs_dim, action_input, &mut init_rng)?;

    let probe = probe_states(dataset, config.seed)?;
    let mut trace = CollapseTrace::default();
    let record = |enc: &EncoderParams, step: u64, trace: &mut CollapseTrace| -> Result<()> {
        let emb = enc.encode(&probe)?;
        trace.entries.push((step, cosine_similarity_mean(&emb)?));
        Ok(())
    };
    record(&enc, 0, &mut trace)?;

    if matches!(enc.method, ReprMethod::Random) || config.total_steps == 0 {
        return Ok((enc, trace));
    }

    let mut rng = component_rng(config.seed, "repr-train");
    let mut adam = AdamState::new(&enc.params, config.learning_rate);
    for step in 1..=config.total_steps as u64 {
        let loss_value = match enc.method {
            ReprMethod::Rldp | ReprMethod::RldpNoSn => {
                let segs = sample_segments(dataset, config.horizon, config.batch, &mut rng)?;
                let batch =
                    SegmentBatch::from_segments(&segs, dataset.meta.action_kind, action_dim)?;
                let mut graph = Graph::new();
                let loss = loss_rldp(&mut graph, &enc, &batch, config.lambda)?;
                graph.backward(loss, &mut enc.params)?;
                graph.value(loss).item()
            }
            ReprMethod::Laplacian => {
                let batch = sample_transitions(dataset, config.batch, &mut rng)?;
                let pairs = PairBatch {
                    s: Tensor::matrix(batch.batch, batch.obs_dim, batch.states)?,
                    s_next: Tensor::matrix(batch.batch, batch.obs_dim, batch.next_states)?,
                };
                let mut graph = Graph::new();
                let loss = loss_laplacian(&mut graph, &enc, &pairs, config.beta)?;
                graph.backward(loss, &mut enc.params)?;
                graph.value(loss).item()
            }
            ReprMethod::Random => unreachable!("handled above"),
        };
        if !loss_value.is_finite() {
            return Err(Error::NumericFailure {
                context: format!("representation loss at step {step}"),
            });
        }
        adam_step(&mut adam, &mut enc.params)?;
        if step % config.target_update_period as u64 == 0 {
            enc.refresh_target();
        }
        if step % TRACE_EVERY == 0 {
            record(&enc, step, &mut trace)?;
        }
    }
    Ok((enc, trace))
}
