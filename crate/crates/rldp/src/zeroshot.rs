//! Test-time machinery: reward -> task-embedding inference, policy
//! evaluation rollouts, and successor-measure heatmap export.
//!
//! Rewards are always evaluated on next states s', matching the convention
//! of the inference rule z = (1/N) sum phi(s'_i) r(s'_i) and of the
//! action-value definition the oracles use.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{kernels, Tensor};
use crate::bfm::BfmParams;
use crate::envs::{Dataset, GridAction, GridWorld, PointMass, PointState};
use crate::repr::EncoderParams;
use crate::seeding::derive_seed;
use crate::{Error, Result};

/// Task reward over observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RewardSpec {
    /// 1 when the observed cell equals the goal (gridworld).
    GoalCell { x: usize, y: usize },
    /// 1 when the position is within `radius` of (cx, cy) (pointmass).
    GoalRegion { cx: f64, cy: f64, radius: f64 },
    /// r(s) = weights . obs
    LinearInObs { weights: Vec<f64> },
    /// Per-free-cell reward table (gridworld).
    Tabular { values: Vec<f64> },
}

impl RewardSpec {
    pub fn is_goal_task(&self) -> bool {
        matches!(self, RewardSpec::GoalCell { .. } | RewardSpec::GoalRegion { .. })
    }

    pub fn label(&self) -> String {
        match self {
            RewardSpec::GoalCell { x, y } => format!("goal_cell_{x}_{y}"),
            RewardSpec::GoalRegion { cx, cy, radius } => format!("goal_region_{cx}_{cy}_{radius}"),
            RewardSpec::LinearInObs { .. } => "linear_in_obs".into(),
            RewardSpec::Tabular { .. } => "tabular".into(),
        }
    }

    /// Evaluate on a gridworld observation.
    pub fn eval_grid(&self, env: &GridWorld, obs: &[f64]) -> Result<f64> {
        match self {
            RewardSpec::GoalCell { x, y } => {
                env.cell_id(*x, *y)?; // goal must be a free cell
                Ok(if env.decode(obs) == (*x, *y) { 1.0 } else { 0.0 })
            }
            RewardSpec::LinearInObs { weights } => {
                if weights.len() != obs.len() {
                    return Err(Error::Shape {
                        context: "linear_in_obs".into(),
                        detail: format!("{} weights vs obs dim {}", weights.len(), obs.len()),
                    });
                }
                Ok(kernels::dot(weights, obs))
            }
            RewardSpec::Tabular { values } => {
                if values.len() != env.n_free() {
                    return Err(Error::Shape {
                        context: "tabular reward".into(),
                        detail: format!("{} values vs {} free cells", values.len(), env.n_free()),
                    });
                }
                let (x, y) = env.decode(obs);
                Ok(values[env.cell_id(x, y)?])
            }
            RewardSpec::GoalRegion { .. } => Err(Error::InvalidArgument {
                context: "goal_region rewards apply to the pointmass env".into(),
            }),
        }
    }

    /// Evaluate on a pointmass observation [px, py, vx, vy].
    pub fn eval_point(&self, obs: &[f64]) -> Result<f64> {
        match self {
            RewardSpec::GoalRegion { cx, cy, radius } => {
                let dx = obs[0] - cx;
                let dy = obs[1] - cy;
                Ok(if (dx * dx + dy * dy).sqrt() <= *radius { 1.0 } else { 0.0 })
            }
            RewardSpec::LinearInObs { weights } => {
                if weights.len() != obs.len() {
                    return Err(Error::Shape {
                        context: "linear_in_obs".into(),
                        detail: format!("{} weights vs obs dim {}", weights.len(), obs.len()),
                    });
                }
                Ok(kernels::dot(weights, obs))
            }
            _ => Err(Error::InvalidArgument {
                context: format!("reward {self:?} does not apply to the pointmass env"),
            }),
        }
    }
}

/// Pick `n` distinct transition indices (uniform, without replacement) and
/// return them sorted, so the summation order is deterministic; with n equal
/// to the dataset size this is exactly the full sweep. Falls back to
/// with-replacement draws for the excess when n exceeds the dataset size.
fn sample_indices(total: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    if n >= total {
        let mut idx: Vec<usize> = (0..total).collect();
        if n > total {
            idx.extend((0..n - total).map(|_| rng.random_range(0..total)));
            idx.sort_unstable();
        }
        return idx;
    }
    // partial Fisher-Yates over an index array
    let mut pool: Vec<usize> = (0..total).collect();
    for i in 0..n {
        let j = rng.random_range(i..total);
        pool.swap(i, j);
    }
    let mut chosen = pool[..n].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Reward-weighted feature average z = (1/N) sum_i phi(s'_i) r(s'_i).
pub fn infer_z_mean(
    dataset: &Dataset,
    encoder: &EncoderParams,
    reward: &dyn Fn(&[f64]) -> Result<f64>,
    n: usize,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument { context: "infer_z_mean needs N >= 1".into() });
    }
    let total = dataset.n_transitions();
    if total == 0 {
        return Err(Error::Dataset { context: "cannot infer z from an empty dataset".into() });
    }
    let indices = sample_indices(total, n, rng);
    let obs_dim = dataset.meta.obs_dim;
    let mut states = Vec::with_capacity(indices.len() * obs_dim);
    let mut rewards = Vec::with_capacity(indices.len());
    for &i in &indices {
        let tr = dataset.transition(i);
        states.extend_from_slice(&tr.next_state);
        rewards.push(reward(&tr.next_state)?);
    }
    let phi = encoder.encode(&Tensor::matrix(indices.len(), obs_dim, states)?)?;
    let mut z = vec![0.0; encoder.d];
    for (i, r) in rewards.iter().enumerate() {
        for (zv, pv) in z.iter_mut().zip(phi.row(i)) {
            *zv += pv * r;
        }
    }
    for zv in z.iter_mut() {
        *zv /= n as f64;
    }
    Tensor::matrix(1, encoder.d, z)
}

/// Deterministic full sweep over every stored transition.
pub fn infer_z_mean_full(
    dataset: &Dataset,
    encoder: &EncoderParams,
    reward: &dyn Fn(&[f64]) -> Result<f64>,
) -> Result<Tensor> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    infer_z_mean(dataset, encoder, reward, dataset.n_transitions(), &mut rng)
}

/// Ridge regression min_z E[(phi^T z - r)^2]: solves
/// (Phi^T Phi + ridge I) z = Phi^T r over the sampled design matrix by
/// Cholesky factorization. A singular system without ridge is an error.
pub fn infer_z_regression(
    dataset: &Dataset,
    encoder: &EncoderParams,
    reward: &dyn Fn(&[f64]) -> Result<f64>,
    n: usize,
    ridge: f64,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if n == 0 {
        return Err(Error::InvalidArgument { context: "infer_z_regression needs N >= 1".into() });
    }
    if ridge < 0.0 {
        return Err(Error::InvalidArgument { context: "ridge must be >= 0".into() });
    }
    let total = dataset.n_transitions();
    if total == 0 {
        return Err(Error::Dataset { context: "cannot infer z from an empty dataset".into() });
    }
    let indices = sample_indices(total, n, rng);
    let obs_dim = dataset.meta.obs_dim;
    let d = encoder.d;
    let mut states = Vec::with_capacity(indices.len() * obs_dim);
    let mut rewards = Vec::with_capacity(indices.len());
    for &i in &indices {
        let tr = dataset.transition(i);
        states.extend_from_slice(&tr.next_state);
        rewards.push(reward(&tr.next_state)?);
    }
    let phi = encoder.encode(&Tensor::matrix(indices.len(), obs_dim, states)?)?;

    // normal equations
    let mut gram = vec![0.0; d * d];
    kernels::matmul_tn_acc(phi.values(), phi.values(), &mut gram, indices.len(), d, d);
    for j in 0..d {
        gram[j * d + j] += ridge;
    }
    let mut rhs = vec![0.0; d];
    for (i, r) in rewards.iter().enumerate() {
        for (acc, pv) in rhs.iter_mut().zip(phi.row(i)) {
            *acc += pv * r;
        }
    }
    let z = cholesky_solve(&gram, &rhs, d)?;
    Tensor::matrix(1, d, z)
}

/// Cholesky solve for a symmetric positive-definite system.
fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    let scale = (0..n).map(|i| a[i * n + i].abs()).fold(0.0f64, f64::max).max(1.0);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= scale * 1e-12 {
                    return Err(Error::Singular { context: "infer_z_regression".into() });
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    // forward then backward substitution
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Ok(x)
}

/// Rescale an inferred embedding to norm sqrt(d), matching the z
/// distribution the critic saw during training. Near-zero embeddings are
/// returned unchanged.
pub fn rescale_z(z: &Tensor) -> Tensor {
    let d = z.cols();
    let norm: f64 = z.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return z.clone();
    }
    let scale = (d as f64).sqrt() / norm;
    let vals: Vec<f64> = z.values().iter().map(|v| v * scale).collect();
    Tensor::matrix(1, d, vals).expect("same shape")
}

/// Environments an evaluation rollout can run in.
pub enum EvalEnv<'a> {
    Grid(&'a GridWorld),
    Point(&'a PointMass),
}

/// Policies an evaluation rollout can follow.
pub enum EvalPolicy<'a> {
    /// Greedy argmax over the BFM critic (discrete) or the deterministic
    /// actor (continuous), conditioned on a fixed z.
    Bfm { bfm: &'a BfmParams, z: &'a Tensor },
    /// A tabular policy over gridworld free-cell indices (oracle baselines).
    TabularGrid { env: &'a GridWorld, policy: &'a crate::oracle::TabularPolicy },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode: usize,
    pub ret: f64,
    pub discounted: f64,
    pub success: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub episodes: Vec<EpisodeResult>,
    pub mean_return: f64,
    pub std_return: f64,
    pub success_rate: f64,
    pub seed: u64,
}

impl EvalReport {
    fn from_episodes(episodes: Vec<EpisodeResult>, seed: u64) -> Self {
        let n = episodes.len();
        if n == 0 {
            return EvalReport { episodes, seed, ..Default::default() };
        }
        let mean = episodes.iter().map(|e| e.ret).sum::<f64>() / n as f64;
        let var = episodes.iter().map(|e| (e.ret - mean) * (e.ret - mean)).sum::<f64>() / n as f64;
        let success_rate = episodes.iter().filter(|e| e.success).count() as f64 / n as f64;
        EvalReport { episodes, mean_return: mean, std_return: var.sqrt(), success_rate, seed }
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("episode,return,discounted_return,success\n");
        for e in &self.episodes {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.episode,
                e.ret,
                e.discounted,
                if e.success { 1 } else { 0 }
            ));
        }
        crate::fsutil::atomic_write(path, out.as_bytes())
    }
}

/// Deterministic evaluation rollouts: `episodes` runs of at most `max_steps`
/// steps, rewards on next states, goal episodes terminating at the goal.
/// Episode e draws its start from an RNG seeded by (seed, e).
pub fn evaluate(
    env: &EvalEnv,
    policy: &EvalPolicy,
    reward: &RewardSpec,
    episodes: usize,
    max_steps: usize,
    gamma: f64,
    seed: u64,
) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        use rand::SeedableRng;
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("eval-{episode}")));
        let result = match env {
            EvalEnv::Grid(grid) => {
                run_grid_episode(grid, policy, reward, max_steps, gamma, episode, &mut rng)?
            }
            EvalEnv::Point(pm) => {
                run_point_episode(pm, policy, reward, max_steps, gamma, episode, &mut rng)?
            }
        };
        results.push(result);
    }
    Ok(EvalReport::from_episodes(results, seed))
}

fn run_grid_episode(
    env: &GridWorld,
    policy: &EvalPolicy,
    reward: &RewardSpec,
    max_steps: usize,
    gamma: f64,
    episode: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeResult> {
    let free = env.free_cells();
    let mut cell = free[rng.random_range(0..free.len())];
    let mut ret = 0.0;
    let mut discounted = 0.0;
    let mut success = false;
    let mut discount = 1.0;
    for _ in 0..max_steps {
        let obs = env.observe(cell);
        let action = match policy {
            EvalPolicy::Bfm { bfm, z } => {
                let s = Tensor::matrix(1, obs.len(), obs.clone())?;
                let a = bfm.greedy_actions(&bfm.critic, &s, z)?[0];
                GridAction::from_index(a)?
            }
            EvalPolicy::TabularGrid { env: penv, policy } => {
                let id = penv.cell_id(cell.0, cell.1)?;
                GridAction::from_index(policy.action(id))?
            }
        };
        let next = env.step(cell, action);
        let next_obs = env.observe(next);
        let r = reward.eval_grid(env, &next_obs)?;
        ret += r;
        discounted += discount * r;
        discount *= gamma;
        cell = next;
        if let RewardSpec::GoalCell { x, y } = reward {
            if next == (*x, *y) {
                success = true;
                break;
            }
        }
    }
    Ok(EpisodeResult { episode, ret, discounted, success })
}

fn run_point_episode(
    env: &PointMass,
    policy: &EvalPolicy,
    reward: &RewardSpec,
    max_steps: usize,
    gamma: f64,
    episode: usize,
    rng: &mut impl Rng,
) -> Result<EpisodeResult> {
    let mut state = PointState::at(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    let mut ret = 0.0;
    let mut discounted = 0.0;
    let mut success = false;
    let mut discount = 1.0;
    for _ in 0..max_steps {
        let obs = state.observe();
        let action = match policy {
            EvalPolicy::Bfm { bfm, z } => {
                let s = Tensor::matrix(1, obs.len(), obs.clone())?;
                let a = bfm.actor_forward_eager(&bfm.actor, &s, z)?;
                [a.values()[0], a.values()[1]]
            }
            EvalPolicy::TabularGrid { .. } => {
                return Err(Error::InvalidArgument {
                    context: "tabular policies evaluate on the gridworld only".into(),
                })
            }
        };
        state = env.step(&state, action)?;
        let r = reward.eval_point(&state.observe())?;
        ret += r;
        discounted += discount * r;
        discount *= gamma;
        if let RewardSpec::GoalRegion { .. } = reward {
            if r > 0.0 {
                success = true;
                break;
            }
        }
    }
    Ok(EpisodeResult { episode, ret, discounted, success })
}

/// Successor-measure heatmap psi(s0, a0, z)^T phi(s+) over every free cell.
/// Values are densities with respect to rho: they may exceed 1 and may be
/// slightly negative; they are not clipped.
pub fn successor_heatmap(
    bfm: &BfmParams,
    encoder: &EncoderParams,
    env: &GridWorld,
    s0: (usize, usize),
    a0: GridAction,
    z: &Tensor,
) -> Result<Vec<(usize, usize, f64)>> {
    env.cell_id(s0.0, s0.1)?; // s0 must be a free cell
    let obs = env.observe(s0);
    let s = Tensor::matrix(1, obs.len(), obs)?;
    let mut a_onehot = vec![0.0; bfm.action_input_dim];
    a_onehot[a0.index()] = 1.0;
    let a = Tensor::matrix(1, bfm.action_input_dim, a_onehot)?;
    let psi = bfm.critic_forward_eager(&bfm.critic, &s, &a, z)?;

    let n = env.n_free();
    let mut all_obs = Vec::with_capacity(n * env.obs_dim());
    for &cell in env.free_cells() {
        all_obs.extend_from_slice(&env.observe(cell));
    }
    let phi = encoder.encode(&Tensor::matrix(n, env.obs_dim(), all_obs)?)?;
    Ok(env
        .free_cells()
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (x, y, kernels::dot(psi.row(0), phi.row(i))))
        .collect())
}

pub fn heatmap_to_csv(heatmap: &[(usize, usize, f64)], path: &Path) -> Result<()> {
    let mut out = String::from("x,y,value\n");
    for (x, y, v) in heatmap {
        out.push_str(&format!("{x},{y},{v}\n"));
    }
    crate::fsutil::atomic_write(path, out.as_bytes())
}
