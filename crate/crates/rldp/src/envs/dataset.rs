//! Reward-free offline datasets: generation, segment and transition sampling.
//!
//! No reward is stored anywhere; `done` marks episode truncation only.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gridworld::{GridAction, GridObs, GridWorld};
use super::pointmass::{PointMass, PointState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Discrete actions are stored as a single-element vector holding the index.
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_id: String,
    pub obs_dim: usize,
    /// Number of discrete actions, or the width of a continuous action vector.
    pub action_dim: usize,
    pub action_kind: ActionKind,
    pub policy: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub episodes: Vec<Vec<Transition>>,
}

impl Dataset {
    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    /// Stored floats per action (1 for discrete indices).
    pub fn action_width(&self) -> usize {
        match self.meta.action_kind {
            ActionKind::Discrete => 1,
            ActionKind::Continuous => self.meta.action_dim,
        }
    }

    pub fn iter_transitions(&self) -> impl Iterator<Item = &Transition> {
        self.episodes.iter().flatten()
    }

    pub fn transition(&self, flat: usize) -> &Transition {
        let mut i = flat;
        for ep in &self.episodes {
            if i < ep.len() {
                return &ep[i];
            }
            i -= ep.len();
        }
        panic!("flat transition index {flat} out of range");
    }

    /// Checks the chaining invariant next_state[t] == state[t+1] within
    /// every episode.
    pub fn validate_chaining(&self) -> Result<()> {
        for (e, ep) in self.episodes.iter().enumerate() {
            for t in 1..ep.len() {
                if ep[t - 1].next_state != ep[t].state {
                    return Err(Error::Dataset {
                        context: format!("episode {e}: next_state[{}] != state[{}]", t - 1, t),
                    });
                }
            }
        }
        Ok(())
    }
}

/// A horizon-H slice of one episode: states s_0..s_H and actions a_0..a_{H-1}.
#[derive(Debug, Clone)]
pub struct Segment {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Segment {
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }
}

/// Batch of independently indexed transitions plus an s+ column drawn
/// independently and uniformly over all stored next-states.
#[derive(Debug, Clone)]
pub struct TransitionBatch {
    pub batch: usize,
    pub obs_dim: usize,
    pub action_width: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub next_states: Vec<f64>,
    pub done: Vec<bool>,
    pub splus: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenPolicy {
    UniformRandom,
    /// Epsilon-greedy on the visit-count bonus 1/sqrt(1 + N(cell));
    /// continuous states are bucketed on a fixed 16x16 grid.
    CountBonus,
}

impl GenPolicy {
    pub fn id(&self) -> &'static str {
        match self {
            GenPolicy::UniformRandom => "uniform_random",
            GenPolicy::CountBonus => "count_bonus",
        }
    }
}

const COUNT_BONUS_EPS: f64 = 0.2;
const POINTMASS_BUCKETS: usize = 16;

fn bonus(count: u64) -> f64 {
    1.0 / (1.0 + count as f64).sqrt()
}

/// Pick a uniformly random element among the argmax entries.
fn argmax_tiebreak(values: &[f64], rng: &mut impl Rng) -> usize {
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> =
        values.iter().enumerate().filter(|(_, &v)| v == best).map(|(i, _)| i).collect();
    ties[rng.random_range(0..ties.len())]
}

/// Generate a reward-free gridworld dataset. Episodes start at `start` when
/// given (a fixed start keeps exploration-coverage comparisons meaningful),
/// or at a uniformly random free cell otherwise.
pub fn generate_gridworld_dataset(
    env: &GridWorld,
    policy: GenPolicy,
    episodes: usize,
    episode_len: usize,
    seed: u64,
    start: Option<(usize, usize)>,
) -> Result<Dataset> {
    if episodes == 0 || episode_len == 0 {
        return Err(Error::InvalidArgument { context: "episodes and episode_len must be > 0".into() });
    }
    if let Some(s) = start {
        if !env.is_free(s.0, s.1) {
            return Err(Error::InvalidArgument { context: format!("start {s:?} is not a free cell") });
        }
    }
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; env.n_free()];
    let mut eps_out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut cell = match start {
            Some(s) => s,
            None => env.free_cells()[rng.random_range(0..env.n_free())],
        };
        counts[env.cell_id(cell.0, cell.1)?] += 1;
        let mut ep = Vec::with_capacity(episode_len);
        for t in 0..episode_len {
            let action = match policy {
                GenPolicy::UniformRandom => GridAction::ALL[rng.random_range(0..4)],
                GenPolicy::CountBonus => {
                    if rng.random_range(0.0..1.0) < COUNT_BONUS_EPS {
                        GridAction::ALL[rng.random_range(0..4)]
                    } else {
                        let scores: Vec<f64> = GridAction::ALL
                            .iter()
                            .map(|&a| {
                                let next = env.step(cell, a);
                                bonus(counts[env.cell_id(next.0, next.1).expect("free")])
                            })
                            .collect();
                        GridAction::ALL[argmax_tiebreak(&scores, &mut rng)]
                    }
                }
            };
            let next = env.step(cell, action);
            counts[env.cell_id(next.0, next.1)?] += 1;
            ep.push(Transition {
                state: env.observe(cell),
                action: vec![action.index() as f64],
                next_state: env.observe(next),
                done: t + 1 == episode_len,
            });
            cell = next;
        }
        eps_out.push(ep);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            env_id: gridworld_env_id(env),
            obs_dim: env.obs_dim(),
            action_dim: 4,
            action_kind: ActionKind::Discrete,
            policy: policy.id().into(),
            seed,
        },
        episodes: eps_out,
    })
}

pub fn gridworld_env_id(env: &GridWorld) -> String {
    let enc = match env.obs {
        GridObs::OneHotSphere => "onehot",
        GridObs::XyNorm => "xy",
    };
    format!("fourroom13-{enc}")
}

/// Candidate accelerations for the count-bonus pointmass policy: the eight
/// compass directions plus rest.
const POINT_CANDIDATES: [[f64; 2]; 9] = [
    [0.0, 0.0],
    [1.0, 0.0],
    [-1.0, 0.0],
    [0.0, 1.0],
    [0.0, -1.0],
    [1.0, 1.0],
    [1.0, -1.0],
    [-1.0, 1.0],
    [-1.0, -1.0],
];

fn point_bucket(s: &PointState) -> usize {
    let bx = ((s.px * POINTMASS_BUCKETS as f64) as usize).min(POINTMASS_BUCKETS - 1);
    let by = ((s.py * POINTMASS_BUCKETS as f64) as usize).min(POINTMASS_BUCKETS - 1);
    by * POINTMASS_BUCKETS + bx
}

pub fn generate_pointmass_dataset(
    env: &PointMass,
    policy: GenPolicy,
    episodes: usize,
    episode_len: usize,
    seed: u64,
) -> Result<Dataset> {
    if episodes == 0 || episode_len == 0 {
        return Err(Error::InvalidArgument { context: "episodes and episode_len must be > 0".into() });
    }
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; POINTMASS_BUCKETS * POINTMASS_BUCKETS];
    let mut eps_out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut s = PointState::at(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        counts[point_bucket(&s)] += 1;
        let mut ep = Vec::with_capacity(episode_len);
        for t in 0..episode_len {
            let action = match policy {
                GenPolicy::UniformRandom => {
                    [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
                }
                GenPolicy::CountBonus => {
                    if rng.random_range(0.0..1.0) < COUNT_BONUS_EPS {
                        [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
                    } else {
                        let scores: Vec<f64> = POINT_CANDIDATES
                            .iter()
                            .map(|&a| match env.step(&s, a) {
                                Ok(next) => bonus(counts[point_bucket(&next)]),
                                Err(_) => f64::NEG_INFINITY,
                            })
                            .collect();
                        POINT_CANDIDATES[argmax_tiebreak(&scores, &mut rng)]
                    }
                }
            };
            let next = env.step(&s, action)?;
            counts[point_bucket(&next)] += 1;
            ep.push(Transition {
                state: s.observe(),
                action: action.to_vec(),
                next_state: next.observe(),
                done: t + 1 == episode_len,
            });
            s = next;
        }
        eps_out.push(ep);
    }
    Ok(Dataset {
        meta: DatasetMeta {
            env_id: "pointmass4".into(),
            obs_dim: env.obs_dim(),
            action_dim: env.action_dim(),
            action_kind: ActionKind::Continuous,
            policy: policy.id().into(),
            seed,
        },
        episodes: eps_out,
    })
}

/// Sample `batch` horizon-H segments uniformly over all valid start indices;
/// segments never cross an episode boundary.
pub fn sample_segments(
    dataset: &Dataset,
    horizon: usize,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Segment>> {
    if horizon == 0 {
        return Err(Error::InvalidArgument { context: "segment horizon must be >= 1".into() });
    }
    // valid starts per episode: len - H + 1 when len >= H
    let mut cum: Vec<(usize, usize)> = Vec::new(); // (episode, cumulative starts)
    let mut total = 0usize;
    for (e, ep) in dataset.episodes.iter().enumerate() {
        if ep.len() >= horizon {
            total += ep.len() - horizon + 1;
            cum.push((e, total));
        }
    }
    if total == 0 {
        return Err(Error::Dataset {
            context: format!("no episode of length >= {horizon} to draw segments from"),
        });
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let r = rng.random_range(0..total);
        let slot = cum.partition_point(|&(_, c)| c <= r);
        let (e, cum_end) = cum[slot];
        let ep = &dataset.episodes[e];
        let n_starts = ep.len() - horizon + 1;
        let start = r - (cum_end - n_starts);
        let mut states = Vec::with_capacity(horizon + 1);
        let mut actions = Vec::with_capacity(horizon);
        states.push(ep[start].state.clone());
        for t in 0..horizon {
            actions.push(ep[start + t].action.clone());
            states.push(ep[start + t].next_state.clone());
        }
        out.push(Segment { states, actions });
    }
    Ok(out)
}

/// Sample a batch of (s, a, s', done) rows plus an independent s+ column,
/// both uniform over all stored transitions.
pub fn sample_transitions(
    dataset: &Dataset,
    batch: usize,
    rng: &mut impl Rng,
) -> Result<TransitionBatch> {
    let n = dataset.n_transitions();
    if n == 0 {
        return Err(Error::Dataset { context: "cannot sample from an empty dataset".into() });
    }
    let obs_dim = dataset.meta.obs_dim;
    let aw = dataset.action_width();
    let mut out = TransitionBatch {
        batch,
        obs_dim,
        action_width: aw,
        states: Vec::with_capacity(batch * obs_dim),
        actions: Vec::with_capacity(batch * aw),
        next_states: Vec::with_capacity(batch * obs_dim),
        done: Vec::with_capacity(batch),
        splus: Vec::with_capacity(batch * obs_dim),
    };
    for _ in 0..batch {
        let tr = dataset.transition(rng.random_range(0..n));
        out.states.extend_from_slice(&tr.state);
        out.actions.extend_from_slice(&tr.action);
        out.next_states.extend_from_slice(&tr.next_state);
        out.done.push(tr.done);
        let plus = dataset.transition(rng.random_range(0..n));
        out.splus.extend_from_slice(&plus.next_state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_grid_dataset(episodes: usize, len: usize) -> Dataset {
        let env = GridWorld::four_room(GridObs::OneHotSphere);
        generate_gridworld_dataset(&env, GenPolicy::UniformRandom, episodes, len, 9, Some((1, 1)))
            .unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = small_grid_dataset(3, 7);
        let b = small_grid_dataset(3, 7);
        assert_eq!(a.episodes, b.episodes);
    }

    #[test]
    fn transition_and_done_counts() {
        let d = small_grid_dataset(2, 5);
        assert_eq!(d.n_transitions(), 10);
        let dones = d.iter_transitions().filter(|t| t.done).count();
        assert_eq!(dones, 2);
        d.validate_chaining().unwrap();
    }

    #[test]
    fn count_bonus_covers_more_cells_than_uniform() {
        // Equal budget: 10k steps (400 episodes x 25) from the fixed corner
        // start, 3 seeds. Short episodes keep the comparison meaningful: a
        // 25-step random walk from the corner rarely crosses two doorways.
        let env = GridWorld::four_room(GridObs::OneHotSphere);
        let distinct = |policy: GenPolicy, seed: u64| {
            let d =
                generate_gridworld_dataset(&env, policy, 400, 25, seed, Some((1, 1))).unwrap();
            let mut seen = vec![false; env.n_free()];
            for tr in d.iter_transitions() {
                seen[env.cell_id(env.decode(&tr.state).0, env.decode(&tr.state).1).unwrap()] = true;
                let nx = env.decode(&tr.next_state);
                seen[env.cell_id(nx.0, nx.1).unwrap()] = true;
            }
            seen.iter().filter(|&&s| s).count()
        };
        for seed in [1, 2, 3] {
            let cb = distinct(GenPolicy::CountBonus, seed);
            let ur = distinct(GenPolicy::UniformRandom, seed);
            assert!(cb > ur, "seed {seed}: count_bonus {cb} <= uniform {ur}");
        }
    }

    #[test]
    fn segments_single_transition_at_h1() {
        let d = small_grid_dataset(2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let segs = sample_segments(&d, 1, 8, &mut rng).unwrap();
        for s in segs {
            assert_eq!(s.states.len(), 2);
            assert_eq!(s.actions.len(), 1);
        }
    }

    #[test]
    fn episode_of_exact_length_gives_one_segment_start() {
        let d = small_grid_dataset(1, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let segs = sample_segments(&d, 4, 16, &mut rng).unwrap();
        for s in &segs {
            assert_eq!(s.states[0], d.episodes[0][0].state);
        }
    }

    #[test]
    fn too_short_episodes_error() {
        let d = small_grid_dataset(2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_segments(&d, 10, 1, &mut rng).is_err());
    }

    /// Synthetic dataset whose states are unique step markers, so a segment's
    /// start index can be read off its first state exactly.
    fn marker_dataset(lengths: &[usize]) -> Dataset {
        let mut episodes = Vec::new();
        let mut marker = 0.0;
        for &len in lengths {
            let mut ep = Vec::with_capacity(len);
            for t in 0..len {
                ep.push(Transition {
                    state: vec![marker],
                    action: vec![0.0],
                    next_state: vec![marker + 1.0],
                    done: t + 1 == len,
                });
                marker += 1.0;
            }
            marker += 10.0; // gap between episodes
            episodes.push(ep);
        }
        Dataset {
            meta: DatasetMeta {
                env_id: "marker".into(),
                obs_dim: 1,
                action_dim: 1,
                action_kind: ActionKind::Discrete,
                policy: "fixture".into(),
                seed: 0,
            },
            episodes,
        }
    }

    #[test]
    fn segment_start_distribution_is_uniform() {
        // Episodes of lengths 6 and 4, H=3: 4 + 2 = 6 valid starts.
        // Every start-count must land within 3 sigma of the multinomial mean.
        let d = marker_dataset(&[6, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60_000usize;
        let mut counts = std::collections::HashMap::<u64, usize>::new();
        for _ in 0..n / 100 {
            for seg in sample_segments(&d, 3, 100, &mut rng).unwrap() {
                *counts.entry(seg.states[0][0] as u64).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), 6, "expected exactly 6 distinct starts");
        let p = 1.0 / 6.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (_, &c) in counts.iter() {
            assert!(
                (c as f64 - n as f64 * p).abs() <= 3.0 * sigma,
                "bin count {c} outside 3 sigma of {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn splus_marginal_is_uniform_and_independent() {
        let d = small_grid_dataset(2, 10);
        let env = GridWorld::four_room(GridObs::OneHotSphere);
        let n_draws = 40_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut next_counts = std::collections::HashMap::<(usize, usize), usize>::new();
        let mut sids = Vec::with_capacity(n_draws);
        let mut pids = Vec::with_capacity(n_draws);
        for _ in 0..n_draws / 100 {
            let batch = sample_transitions(&d, 100, &mut rng).unwrap();
            for i in 0..batch.batch {
                let obs = &batch.splus[i * batch.obs_dim..(i + 1) * batch.obs_dim];
                *next_counts.entry(env.decode(obs)).or_default() += 1;
                let s_obs = &batch.states[i * batch.obs_dim..(i + 1) * batch.obs_dim];
                sids.push(env.cell_id(env.decode(s_obs).0, env.decode(s_obs).1).unwrap() as f64);
                pids.push(env.cell_id(env.decode(obs).0, env.decode(obs).1).unwrap() as f64);
            }
        }
        // marginal of s+ matches the empirical next-state frequencies in the
        // dataset within 3 sigma
        let mut ds_counts = std::collections::HashMap::<(usize, usize), usize>::new();
        for tr in d.iter_transitions() {
            *ds_counts.entry(env.decode(&tr.next_state)).or_default() += 1;
        }
        let total = d.n_transitions() as f64;
        for (cell, &c) in next_counts.iter() {
            let p = ds_counts.get(cell).copied().unwrap_or(0) as f64 / total;
            let sigma = (n_draws as f64 * p * (1.0 - p)).sqrt().max(1.0);
            assert!(
                (c as f64 - n_draws as f64 * p).abs() <= 4.0 * sigma,
                "cell {cell:?}: count {c}, expected {}",
                n_draws as f64 * p
            );
        }
        // Pearson correlation between s-cell ids and s+-cell ids should be
        // ~0 under independence (3/sqrt(n) ~ 0.015); it is ~0.3+ if s+ were
        // drawn from the same row as s.
        let n = sids.len() as f64;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
        let (ms, mp) = (mean(&sids), mean(&pids));
        let mut cov = 0.0;
        let mut vs = 0.0;
        let mut vp = 0.0;
        for (s, p) in sids.iter().zip(&pids) {
            cov += (s - ms) * (p - mp);
            vs += (s - ms) * (s - ms);
            vp += (p - mp) * (p - mp);
        }
        let corr = cov / (vs.sqrt() * vp.sqrt());
        assert!(corr.abs() < 0.04, "correlation {corr}");
    }

    #[test]
    fn batch_of_one_on_one_transition_dataset() {
        let d = small_grid_dataset(1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let b = sample_transitions(&d, 1, &mut rng).unwrap();
        assert_eq!(b.states, d.episodes[0][0].state);
        assert_eq!(b.splus, d.episodes[0][0].next_state);
    }
}
