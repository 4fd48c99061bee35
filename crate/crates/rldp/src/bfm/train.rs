//! Offline BFM training: alternating critic and actor updates over sampled
//! transition batches, with hard target refreshes.

use std::path::Path;

use crate::autodiff::{adam_step, AdamState, Graph};
use crate::envs::{sample_transitions, Dataset};
use crate::repr::EncoderParams;
use crate::seeding::component_rng;
use crate::{Error, Result};

use super::losses::{loss_fb_joint, loss_policy, loss_policy_bc, loss_sm, loss_usfa, BfmBatch};
use super::{sample_z, ActorVariant, BfmConfig, BfmParams, CriticVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BfmMode {
    /// Encoder stays frozen; only psi (and the actor) train.
    FrozenFeatures,
    /// Joint baseline: phi trains together with psi through the
    /// successor-measure loss; the bootstrap uses the target copy of phi.
    FbJoint,
}

/// Training metrics sampled every [`METRICS_EVERY`] steps.
#[derive(Debug, Clone, Default)]
pub struct TrainMetrics {
    /// (step, critic_loss, actor_loss, mean_q)
    pub rows: Vec<(u64, f64, f64, f64)>,
}

pub const METRICS_EVERY: u64 = 100;

impl TrainMetrics {
    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,critic_loss,actor_loss,mean_q\n");
        for (step, cl, al, q) in &self.rows {
            out.push_str(&format!("{step},{cl},{al},{q}\n"));
        }
        crate::fsutil::atomic_write(path, out.as_bytes())
    }
}

/// Train a BFM on a reward-free dataset over frozen (or, for the joint
/// baseline, trainable) state features. Returns the trained parameters, the
/// possibly updated encoder (identical to the input under frozen features),
/// and the metrics trace.
pub fn train_bfm(
    config: &BfmConfig,
    dataset: &Dataset,
    encoder: &EncoderParams,
    mode: BfmMode,
) -> Result<(BfmParams, EncoderParams, TrainMetrics)> {
    config.validate()?;
    if mode == BfmMode::FbJoint && config.critic_variant != CriticVariant::SuccessorMeasure {
        return Err(Error::Config {
            detail: "fb_joint training requires the successor_measure critic".into(),
        });
    }
    if encoder.obs_dim != dataset.meta.obs_dim {
        return Err(Error::Config {
            detail: format!(
                "encoder obs_dim {} != dataset obs_dim {}",
                encoder.obs_dim, dataset.meta.obs_dim
            ),
        });
    }
    let discrete = matches!(dataset.meta.action_kind, crate::envs::ActionKind::Discrete);
    let action_input = dataset.meta.action_dim;

    let mut init_rng = component_rng(config.seed, "bfm-init");
    let mut bfm = BfmParams::init(
        config,
        dataset.meta.obs_dim,
        action_input,
        encoder.d,
        discrete,
        &mut init_rng,
    )?;

    // The joint baseline reinitializes phi (trainable) from its own stream;
    // g/A/w are untouched and unused by the joint loss.
    let mut enc = encoder.clone();
    if mode == BfmMode::FbJoint {
        let mut phi_rng = component_rng(config.seed, "fb-phi");
        let mut fresh = crate::autodiff::ParamStore::new();
        crate::autodiff::init_mlp_params(&enc.phi_spec, "phi", &mut fresh, &mut phi_rng)?;
        for name in fresh.names().map(String::from).collect::<Vec<_>>() {
            let t = fresh.get(&name)?.clone();
            *enc.params.get_mut(&name)? = t;
        }
        enc.refresh_target();
    }

    let mut rng = component_rng(config.seed, "bfm-train");
    let mut critic_adam = AdamState::new(&bfm.critic, config.learning_rate);
    let mut actor_adam =
        (!discrete).then(|| AdamState::new(&bfm.actor, config.learning_rate));
    let mut phi_adam =
        (mode == BfmMode::FbJoint).then(|| AdamState::new(&enc.params, config.learning_rate));

    let mut metrics = TrainMetrics::default();
    for step in 1..=config.steps as u64 {
        let tb = sample_transitions(dataset, config.batch, &mut rng)?;
        let batch = BfmBatch::from_transitions(&tb, dataset.meta.action_kind, action_input)?;
        let z = sample_z(&mut rng, dataset, &enc, config.z_goal_fraction, config.batch)?;

        let mut graph = Graph::new();
        let critic_loss = match (mode, config.critic_variant) {
            (BfmMode::FbJoint, _) => loss_fb_joint(&mut graph, &bfm, &enc, &batch, &z, config.gamma)?,
            (_, CriticVariant::SuccessorMeasure) => {
                loss_sm(&mut graph, &bfm, &enc, &batch, &z, config.gamma)?
            }
            (_, CriticVariant::Usfa) => loss_usfa(&mut graph, &bfm, &enc, &batch, &z, config.gamma)?,
        };
        let critic_loss_value = graph.value(critic_loss).item();
        if !critic_loss_value.is_finite() {
            return Err(Error::NumericFailure { context: format!("critic loss at step {step}") });
        }
        if mode == BfmMode::FbJoint {
            graph.backward_multi(critic_loss, &mut [&mut bfm.critic, &mut enc.params])?;
            adam_step(phi_adam.as_mut().expect("fb mode"), &mut enc.params)?;
        } else {
            graph.backward(critic_loss, &mut bfm.critic)?;
        }
        adam_step(&mut critic_adam, &mut bfm.critic)?;

        let mut actor_loss_value = 0.0;
        if let Some(actor_adam) = actor_adam.as_mut() {
            let mut agraph = Graph::new();
            let actor_loss = match config.actor_variant {
                ActorVariant::Greedy => loss_policy(&mut agraph, &bfm, &batch.s, &z)?,
                ActorVariant::Td3Bc => {
                    let (l, _) =
                        loss_policy_bc(&mut agraph, &bfm, &batch.s, &batch.a, &z, config.alpha_bc)?;
                    l
                }
            };
            actor_loss_value = agraph.value(actor_loss).item();
            if !actor_loss_value.is_finite() {
                return Err(Error::NumericFailure { context: format!("actor loss at step {step}") });
            }
            agraph.backward(actor_loss, &mut bfm.actor)?;
            adam_step(actor_adam, &mut bfm.actor)?;
        }

        if step % config.target_update_period as u64 == 0 {
            bfm.refresh_targets();
            if mode == BfmMode::FbJoint {
                enc.refresh_target();
            }
        }

        if step == 1 || step % METRICS_EVERY == 0 {
            let psi = bfm.critic_forward_eager(&bfm.critic, &batch.s, &batch.a, &z)?;
            let mean_q = (0..batch.batch())
                .map(|i| crate::autodiff::kernels::dot(psi.row(i), z.row(i)))
                .sum::<f64>()
                / batch.batch() as f64;
            metrics.rows.push((step, critic_loss_value, actor_loss_value, mean_q));
        }
    }
    Ok((bfm, enc, metrics))
}
