//! Pipeline subcommands: gen-data, pretrain, train-bfm, eval, diag.
//!
//! Each command reads everything it needs at start, writes artifacts
//! atomically (temp file + rename), and is deterministic under the config's
//! root seed.

use std::path::Path;

use crate::autodiff::{Checkpoint, Tensor};
use crate::bfm::{train_bfm, BfmMode, BfmParams};
use crate::config::{EnvId, InferenceRule, RunConfig, TrainMode};
use crate::envs::{
    generate_gridworld_dataset, generate_pointmass_dataset, load_dataset, save_dataset, Dataset,
    GridWorld, PointMass,
};
use crate::oracle::{lemma_bound_report, BoundReport, TabularMdp, TabularPolicy};
use crate::repr::{
    cosine_similarity_mean, probe_states, train_representation, EncoderParams, ReprMethod,
};
use crate::seeding::component_rng;
use crate::zeroshot::{
    evaluate, heatmap_to_csv, infer_z_mean, infer_z_regression, rescale_z, successor_heatmap,
    EvalEnv, EvalPolicy, EvalReport,
};
use crate::{Error, Result};

fn gridworld(cfg: &RunConfig) -> GridWorld {
    GridWorld::four_room(cfg.env.observation)
}

/// Distinct-cell coverage of a gridworld dataset (states and next states),
/// as a fraction of the free cells.
pub fn gridworld_coverage(env: &GridWorld, dataset: &Dataset) -> Result<f64> {
    let mut seen = vec![false; env.n_free()];
    for tr in dataset.iter_transitions() {
        for obs in [&tr.state, &tr.next_state] {
            let (x, y) = env.decode(obs);
            seen[env.cell_id(x, y)?] = true;
        }
    }
    Ok(seen.iter().filter(|&&s| s).count() as f64 / env.n_free() as f64)
}

/// Distinct-bucket coverage of a pointmass dataset on a 16x16 grid.
pub fn pointmass_coverage(dataset: &Dataset) -> f64 {
    const B: usize = 16;
    let mut seen = vec![false; B * B];
    for tr in dataset.iter_transitions() {
        for obs in [&tr.state, &tr.next_state] {
            let bx = ((obs[0] * B as f64) as usize).min(B - 1);
            let by = ((obs[1] * B as f64) as usize).min(B - 1);
            seen[by * B + bx] = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / (B * B) as f64
}

#[derive(Debug, Clone, Copy)]
pub struct GenDataOutcome {
    pub transitions: usize,
    pub episodes: usize,
    pub coverage: f64,
}

pub fn cmd_gen_data(cfg: &RunConfig, force: bool) -> Result<GenDataOutcome> {
    let path = &cfg.paths.dataset;
    if path.exists() && !force {
        return Err(Error::Config {
            detail: format!("{} exists; pass --force to overwrite", path.display()),
        });
    }
    let seed = cfg.data_seed();
    let (dataset, coverage) = match cfg.env.id {
        EnvId::Fourroom => {
            let env = gridworld(cfg);
            let d = generate_gridworld_dataset(
                &env,
                cfg.data.policy,
                cfg.data.episodes,
                cfg.data.episode_len,
                seed,
                cfg.data.start,
            )?;
            let cov = gridworld_coverage(&env, &d)?;
            (d, cov)
        }
        EnvId::Pointmass => {
            let env = PointMass::default();
            let d = generate_pointmass_dataset(
                &env,
                cfg.data.policy,
                cfg.data.episodes,
                cfg.data.episode_len,
                seed,
            )?;
            let cov = pointmass_coverage(&d);
            (d, cov)
        }
    };
    save_dataset(&dataset, path)?;
    let outcome = GenDataOutcome {
        transitions: dataset.n_transitions(),
        episodes: dataset.episodes.len(),
        coverage,
    };
    let summary = format!(
        "transitions {}\nepisodes {}\ncoverage {}\n",
        outcome.transitions, outcome.episodes, outcome.coverage
    );
    crate::fsutil::atomic_write(&cfg.paths.metrics.join("dataset_summary.txt"), summary.as_bytes())?;
    Ok(outcome)
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainOutcome {
    pub steps: usize,
    pub final_cosine: f64,
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<PretrainOutcome> {
    let dataset = load_dataset(&cfg.paths.dataset)?;
    let (encoder, trace) = train_representation(&cfg.repr, &dataset)?;
    let mut ck = encoder.to_checkpoint();
    let trained_steps =
        if matches!(cfg.repr.method, ReprMethod::Random) { 0 } else { cfg.repr.total_steps };
    ck.meta.push(("trained_steps".into(), trained_steps.to_string()));
    ck.save(&cfg.encoder_checkpoint())?;
    trace.to_csv(&cfg.paths.metrics.join("collapse_trace.csv"))?;
    Ok(PretrainOutcome { steps: trained_steps, final_cosine: trace.final_value() })
}

fn load_encoder(path: &Path) -> Result<EncoderParams> {
    EncoderParams::from_checkpoint(&Checkpoint::load(path)?)
}

/// Path of the encoder actually used by evaluation: the jointly trained copy
/// under fb_joint, the pretrained one otherwise.
pub fn eval_encoder_path(cfg: &RunConfig) -> std::path::PathBuf {
    match cfg.mode {
        TrainMode::FrozenFeatures => cfg.encoder_checkpoint(),
        TrainMode::FbJoint => cfg.paths.checkpoints.join("encoder_fb.ckpt"),
    }
}

pub fn cmd_train_bfm(cfg: &RunConfig) -> Result<()> {
    let dataset = load_dataset(&cfg.paths.dataset)?;
    let mode = match cfg.mode {
        TrainMode::FrozenFeatures => BfmMode::FrozenFeatures,
        TrainMode::FbJoint => BfmMode::FbJoint,
    };
    let encoder = match load_encoder(&cfg.encoder_checkpoint()) {
        Ok(enc) => enc,
        // fb_joint reinitializes phi anyway; build the architecture fresh
        Err(_) if mode == BfmMode::FbJoint => {
            let action_input = dataset.meta.action_dim;
            let mut rng = component_rng(cfg.env.seed, "fb-arch");
            EncoderParams::init(&cfg.repr, dataset.meta.obs_dim, action_input, &mut rng)?
        }
        Err(e) => return Err(e),
    };
    if encoder.d != cfg.repr.d {
        return Err(Error::Config {
            detail: format!("encoder d={} does not match repr.d={}", encoder.d, cfg.repr.d),
        });
    }
    let (bfm, enc_after, metrics) = train_bfm(&cfg.bfm, &dataset, &encoder, mode)?;
    bfm.to_checkpoint().save(&cfg.bfm_checkpoint())?;
    if mode == BfmMode::FbJoint {
        enc_after.to_checkpoint().save(&cfg.paths.checkpoints.join("encoder_fb.ckpt"))?;
    }
    metrics.to_csv(&cfg.paths.metrics.join("bfm_metrics.csv"))?;
    Ok(())
}

/// Task embedding per the configured inference rule, with optional rescale.
fn infer_task_z(
    cfg: &RunConfig,
    dataset: &Dataset,
    encoder: &EncoderParams,
    reward: &dyn Fn(&[f64]) -> Result<f64>,
    task_index: usize,
) -> Result<Tensor> {
    let mut rng = component_rng(cfg.eval_seed(), &format!("infer-{task_index}"));
    let z = match cfg.eval.inference_rule {
        InferenceRule::Mean => {
            infer_z_mean(dataset, encoder, reward, cfg.eval.inference_n, &mut rng)?
        }
        InferenceRule::Regression => infer_z_regression(
            dataset,
            encoder,
            reward,
            cfg.eval.inference_n,
            cfg.eval.ridge,
            &mut rng,
        )?,
    };
    Ok(if cfg.eval.rescale_z { rescale_z(&z) } else { z })
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<(String, EvalReport)>> {
    let dataset = load_dataset(&cfg.paths.dataset)?;
    let encoder = load_encoder(&eval_encoder_path(cfg))?;
    let bfm = BfmParams::from_checkpoint(&Checkpoint::load(&cfg.bfm_checkpoint())?)?;

    let grid_env;
    let point_env;
    let eval_env = match cfg.env.id {
        EnvId::Fourroom => {
            grid_env = gridworld(cfg);
            EvalEnv::Grid(&grid_env)
        }
        EnvId::Pointmass => {
            point_env = PointMass::default();
            EvalEnv::Point(&point_env)
        }
    };

    let mut results = Vec::new();
    let mut summary = String::from("task,mean_return,std_return,success_rate\n");
    for (i, task) in cfg.eval.tasks.iter().enumerate() {
        let reward_env = gridworld(cfg);
        let is_grid = cfg.env.id == EnvId::Fourroom;
        let task_clone = task.clone();
        let reward = move |obs: &[f64]| {
            if is_grid {
                task_clone.eval_grid(&reward_env, obs)
            } else {
                task_clone.eval_point(obs)
            }
        };
        let z = infer_task_z(cfg, &dataset, &encoder, &reward, i)?;
        let report = evaluate(
            &eval_env,
            &EvalPolicy::Bfm { bfm: &bfm, z: &z },
            task,
            cfg.eval.episodes,
            cfg.eval.max_steps,
            cfg.bfm.gamma,
            crate::seeding::derive_seed(cfg.eval_seed(), &format!("task-{i}")),
        )?;
        let label = task.label();
        report.to_csv(&cfg.paths.metrics.join(format!("eval_{label}.csv")))?;
        summary.push_str(&format!(
            "{label},{},{},{}\n",
            report.mean_return, report.std_return, report.success_rate
        ));
        results.push((label, report));
    }
    crate::fsutil::atomic_write(&cfg.paths.metrics.join("eval_summary.csv"), summary.as_bytes())?;
    Ok(results)
}

pub fn cmd_diag(cfg: &RunConfig) -> Result<BoundReport> {
    if cfg.env.id != EnvId::Fourroom {
        return Err(Error::InvalidArgument {
            context: "diag needs the gridworld env; successor-measure heatmaps and the \
                      bound report are tabular-only diagnostics"
                .into(),
        });
    }
    let env = gridworld(cfg);
    let dataset = load_dataset(&cfg.paths.dataset)?;
    let encoder = load_encoder(&eval_encoder_path(cfg))?;
    let bfm = BfmParams::from_checkpoint(&Checkpoint::load(&cfg.bfm_checkpoint())?)?;
    let metrics = &cfg.paths.metrics;

    // current probe-batch cosine similarity
    let probe = probe_states(&dataset, cfg.repr.seed)?;
    let cosine = cosine_similarity_mean(&encoder.encode(&probe)?)?;
    crate::fsutil::atomic_write(
        &metrics.join("cosine_trace.csv"),
        format!("step,mean_cosine\n0,{cosine}\n").as_bytes(),
    )?;

    // heatmaps for the configured (s0, a0): goal-encoded z and a prior draw
    let goal = cfg.diag.heatmap_goal;
    let goal_obs = env.observe((goal.0, goal.1));
    let z_goal = encoder.encode(&Tensor::matrix(1, goal_obs.len(), goal_obs)?)?;
    let hm_goal =
        successor_heatmap(&bfm, &encoder, &env, cfg.diag.heatmap_start, cfg.diag.heatmap_action, &z_goal)?;
    heatmap_to_csv(&hm_goal, &metrics.join("heatmap_goal.csv"))?;

    let mut zrng = component_rng(cfg.env.seed, "diag-z");
    let z_random = crate::bfm::sample_z(&mut zrng, &dataset, &encoder, 0.0, 1)?;
    let hm_rand = successor_heatmap(
        &bfm,
        &encoder,
        &env,
        cfg.diag.heatmap_start,
        cfg.diag.heatmap_action,
        &z_random,
    )?;
    heatmap_to_csv(&hm_rand, &metrics.join("heatmap_random.csv"))?;

    // bound report under the uniform policy
    let mdp = TabularMdp::from_gridworld(&env, cfg.bfm.gamma)?;
    let policy = TabularPolicy::uniform(mdp.n_states, mdp.n_actions);
    let observations = all_observations(&env)?;
    let report = lemma_bound_report(&encoder, &mdp, &policy, &observations, &dataset)?;
    crate::fsutil::atomic_write(
        &metrics.join("lemma_bound.csv"),
        format!(
            "lhs,rhs,loss_dynamics,loss_ortho,lambda,n_latent_states\n{},{},{},{},{},{}\n",
            report.lhs,
            report.rhs,
            report.loss_dynamics,
            report.loss_ortho,
            report.lambda,
            report.n_latent_states
        )
        .as_bytes(),
    )?;

    // raw embeddings dump for external plotting
    let phi = encoder.encode(&observations)?;
    let mut dump = String::from("x,y");
    for j in 0..encoder.d {
        dump.push_str(&format!(",phi{j}"));
    }
    dump.push('\n');
    for (i, &(x, y)) in env.free_cells().iter().enumerate() {
        dump.push_str(&format!("{x},{y}"));
        for v in phi.row(i) {
            dump.push_str(&format!(",{v}"));
        }
        dump.push('\n');
    }
    crate::fsutil::atomic_write(&metrics.join("embeddings.csv"), dump.as_bytes())?;
    Ok(report)
}

/// Observation matrix of every free cell, in free-cell index order.
pub fn all_observations(env: &GridWorld) -> Result<Tensor> {
    let mut vals = Vec::with_capacity(env.n_free() * env.obs_dim());
    for &cell in env.free_cells() {
        vals.extend_from_slice(&env.observe(cell));
    }
    Tensor::matrix(env.n_free(), env.obs_dim(), vals)
}
