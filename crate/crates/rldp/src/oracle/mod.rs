//! Exact tabular ground truth: successor measures by dynamic programming,
//! value iteration, policy evaluation, and the fixed-point verifier for the
//! contrastive successor-measure loss. Everything here is an oracle for
//! quantities learned elsewhere in the crate.

mod bound;
mod trainers;

pub use bound::{lemma_bound_report, BoundReport};
pub use trainers::{train_tabular_sm, train_tabular_usfa, TabularTrainConfig};

use std::path::Path;

use crate::autodiff::kernels;
use crate::envs::{GridAction, GridWorld};
use crate::{Error, Result};

/// DP iteration: stop when the L-inf step delta implies a true error below
/// this tolerance (delta <= tol * (1 - gamma)), abort past the cap.
pub const DP_TOLERANCE: f64 = 1e-10;
pub const DP_ITERATION_CAP: u64 = 100_000;

/// Explicit MDP: transition tensor P[s,a,s'], state distribution rho, gamma.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    p: Vec<f64>,
    pub rho: Vec<f64>,
    pub gamma: f64,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, p: Vec<f64>, rho: Vec<f64>, gamma: f64) -> Result<Self> {
        if p.len() != n_states * n_actions * n_states || rho.len() != n_states {
            return Err(Error::Shape {
                context: "TabularMdp::new".into(),
                detail: format!(
                    "P needs {} entries (got {}), rho needs {} (got {})",
                    n_states * n_actions * n_states,
                    p.len(),
                    n_states,
                    rho.len()
                ),
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument { context: format!("gamma {gamma} not in (0,1)") });
        }
        let mdp = TabularMdp { n_states, n_actions, p, rho, gamma };
        for s in 0..n_states {
            for a in 0..n_actions {
                let sum: f64 = mdp.p_row(s, a).iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidArgument {
                        context: format!("P[{s},{a},.] sums to {sum}, expected 1"),
                    });
                }
            }
        }
        let rho_sum: f64 = mdp.rho.iter().sum();
        if (rho_sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument { context: format!("rho sums to {rho_sum}") });
        }
        Ok(mdp)
    }

    #[inline]
    pub fn p_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.p[base..base + self.n_states]
    }

    /// Full transition tensor viewed as an [S*A, S] matrix.
    pub fn p_matrix(&self) -> &[f64] {
        &self.p
    }

    /// Deterministic four-room MDP over free-cell indices; rho is uniform.
    pub fn from_gridworld(env: &GridWorld, gamma: f64) -> Result<Self> {
        let n = env.n_free();
        let mut p = vec![0.0; n * 4 * n];
        for (id, &cell) in env.free_cells().iter().enumerate() {
            for action in GridAction::ALL {
                let next = env.step(cell, action);
                let nid = env.cell_id(next.0, next.1)?;
                p[(id * 4 + action.index()) * n + nid] = 1.0;
            }
        }
        let rho = vec![1.0 / n as f64; n];
        TabularMdp::new(n, 4, p, rho, gamma)
    }

    /// Parse the structured-text fixture format:
    ///
    /// ```text
    /// rldp-mdp v1
    /// n_states <S> n_actions <A> gamma <g>
    /// p <S*A*S floats>
    /// rho <S floats>
    /// ```
    ///
    /// Whitespace (including newlines) separates tokens freely after the
    /// magic line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let path_str = path.display().to_string();
        Self::parse(&text).map_err(|detail| Error::Format { path: path_str, offset: None, detail })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("rldp-mdp v1") {
            return Err("expected `rldp-mdp v1` magic line".into());
        }
        let rest: String = lines.collect::<Vec<_>>().join(" ");
        let mut tokens = rest.split_whitespace();
        let mut n_states = None;
        let mut n_actions = None;
        let mut gamma = None;
        let mut p = None;
        let mut rho = None;
        while let Some(tok) = tokens.next() {
            let mut take_f64s = |count: usize| -> std::result::Result<Vec<f64>, String> {
                let mut v = Vec::with_capacity(count);
                for i in 0..count {
                    let t = tokens.next().ok_or(format!("expected {count} numbers, got {i}"))?;
                    v.push(t.parse::<f64>().map_err(|_| format!("bad number `{t}`"))?);
                }
                Ok(v)
            };
            match tok {
                "n_states" => n_states = Some(take_f64s(1)?[0] as usize),
                "n_actions" => n_actions = Some(take_f64s(1)?[0] as usize),
                "gamma" => gamma = Some(take_f64s(1)?[0]),
                "p" => {
                    let (s, a) = (
                        n_states.ok_or("p before n_states")?,
                        n_actions.ok_or("p before n_actions")?,
                    );
                    p = Some(take_f64s(s * a * s)?);
                }
                "rho" => {
                    let s = n_states.ok_or("rho before n_states")?;
                    rho = Some(take_f64s(s)?);
                }
                other => return Err(format!("unknown field `{other}`")),
            }
        }
        TabularMdp::new(
            n_states.ok_or("missing n_states")?,
            n_actions.ok_or("missing n_actions")?,
            p.ok_or("missing p")?,
            rho.ok_or("missing rho")?,
            gamma.ok_or("missing gamma")?,
        )
        .map_err(|e| e.to_string())
    }
}

/// Stochastic policy over a tabular MDP; rows sum to 1.
#[derive(Debug, Clone)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::Shape {
                context: "TabularPolicy::new".into(),
                detail: format!("expected {} probs, got {}", n_states * n_actions, probs.len()),
            });
        }
        for s in 0..n_states {
            let sum: f64 = probs[s * n_actions..(s + 1) * n_actions].iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument {
                    context: format!("policy row {s} sums to {sum}"),
                });
            }
        }
        Ok(TabularPolicy { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        TabularPolicy { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    /// Deterministic policy from per-state action indices.
    pub fn deterministic(n_states: usize, n_actions: usize, actions: &[usize]) -> Self {
        let mut probs = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * n_actions + a] = 1.0;
        }
        TabularPolicy { n_states, n_actions, probs }
    }

    #[inline]
    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn action(&self, s: usize) -> usize {
        let row = self.row(s);
        let mut best = 0;
        for (a, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = a;
            }
        }
        best
    }
}

/// Policy-averaged compression of a [S*A, S] table into [S, S]:
/// out[s, x] = sum_a pi(a|s) table[s, a, x].
fn policy_average(table: &[f64], policy: &TabularPolicy, n_states: usize, width: usize) -> Vec<f64> {
    let na = policy.n_actions;
    let mut out = vec![0.0; n_states * width];
    for s in 0..n_states {
        let pi = policy.row(s);
        let dst = &mut out[s * width..(s + 1) * width];
        for a in 0..na {
            let w = pi[a];
            if w == 0.0 {
                continue;
            }
            let src = &table[(s * na + a) * width..(s * na + a + 1) * width];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += w * v;
            }
        }
    }
    out
}

/// Successor measure M[s,a,x] = sum_t gamma^t Pr(s_{t+1} = x | s,a,pi),
/// computed by iterating M <- P + gamma * P * (Pi M) to convergence.
/// Total mass of every (s,a) row is 1/(1-gamma).
pub fn successor_measure_exact(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Vec<f64>> {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let rows = s_n * a_n;
    let mut m = vec![0.0; rows * s_n];
    let stop = DP_TOLERANCE * (1.0 - mdp.gamma);
    for _iter in 0..DP_ITERATION_CAP {
        let averaged = policy_average(&m, policy, s_n, s_n);
        let mut next = kernels::matmul(mdp.p_matrix(), &averaged, rows, s_n, s_n);
        for (nv, pv) in next.iter_mut().zip(mdp.p_matrix()) {
            *nv = pv + mdp.gamma * *nv;
        }
        // row-L1 delta: the iteration map is gamma-contractive in this norm
        // and it bounds the per-row mass error, which per-entry L-inf does not
        let delta = m
            .chunks(s_n)
            .zip(next.chunks(s_n))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        m = next;
        if delta <= stop {
            return Ok(m);
        }
    }
    Err(Error::Convergence { context: "successor_measure_exact".into(), iterations: DP_ITERATION_CAP })
}

/// Q[s,a] = sum_x M[s,a,x] r(x); exact linear map, no iteration.
pub fn q_from_measure(m: &[f64], reward: &[f64], n_states: usize, n_actions: usize) -> Vec<f64> {
    let rows = n_states * n_actions;
    debug_assert_eq!(m.len(), rows * n_states);
    debug_assert_eq!(reward.len(), n_states);
    kernels::matmul(m, reward, rows, n_states, 1)
}

/// Direct policy evaluation of Q^pi with reward on the next state:
/// Q(s,a) = sum_{s'} P(s'|s,a) [ r(s') + gamma * sum_{a'} pi(a'|s') Q(s',a') ].
pub fn policy_q_direct(mdp: &TabularMdp, policy: &TabularPolicy, reward: &[f64]) -> Result<Vec<f64>> {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let rows = s_n * a_n;
    let mut q = vec![0.0; rows];
    let stop = DP_TOLERANCE * (1.0 - mdp.gamma);
    for _ in 0..DP_ITERATION_CAP {
        let v = policy_average(&q, policy, s_n, 1);
        let mut next = vec![0.0; rows];
        for s in 0..s_n {
            for a in 0..a_n {
                let p_row = mdp.p_row(s, a);
                let mut acc = 0.0;
                for (x, &p) in p_row.iter().enumerate() {
                    if p != 0.0 {
                        acc += p * (reward[x] + mdp.gamma * v[x]);
                    }
                }
                next[s * a_n + a] = acc;
            }
        }
        let delta = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        q = next;
        if delta <= stop {
            return Ok(q);
        }
    }
    Err(Error::Convergence { context: "policy_q_direct".into(), iterations: DP_ITERATION_CAP })
}

/// Bellman-optimality iteration with reward on the next state. Returns the
/// optimal Q and its greedy policy (first argmax wins ties).
pub fn value_iteration(mdp: &TabularMdp, reward: &[f64]) -> Result<(Vec<f64>, TabularPolicy)> {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let rows = s_n * a_n;
    let mut q = vec![0.0; rows];
    let stop = DP_TOLERANCE * (1.0 - mdp.gamma);
    for _ in 0..DP_ITERATION_CAP {
        let mut v = vec![f64::NEG_INFINITY; s_n];
        for s in 0..s_n {
            for a in 0..a_n {
                v[s] = v[s].max(q[s * a_n + a]);
            }
        }
        let mut next = vec![0.0; rows];
        for s in 0..s_n {
            for a in 0..a_n {
                let p_row = mdp.p_row(s, a);
                let mut acc = 0.0;
                for (x, &p) in p_row.iter().enumerate() {
                    if p != 0.0 {
                        acc += p * (reward[x] + mdp.gamma * v[x]);
                    }
                }
                next[s * a_n + a] = acc;
            }
        }
        let delta = q.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        q = next;
        if delta <= stop {
            let actions: Vec<usize> = (0..s_n)
                .map(|s| {
                    let row = &q[s * a_n..(s + 1) * a_n];
                    let mut best = 0;
                    for (a, &val) in row.iter().enumerate() {
                        if val > row[best] {
                            best = a;
                        }
                    }
                    best
                })
                .collect();
            return Ok((q, TabularPolicy::deterministic(s_n, a_n, &actions)));
        }
    }
    Err(Error::Convergence { context: "value_iteration".into(), iterations: DP_ITERATION_CAP })
}

/// Discounted state visitation d^pi = (1-gamma) * d0^T (I - gamma P_pi)^{-1},
/// solved by damped iteration d <- (1-gamma) d0 + gamma P_pi^T d.
pub fn visitation_exact(mdp: &TabularMdp, policy: &TabularPolicy, d0: &[f64]) -> Result<Vec<f64>> {
    let s_n = mdp.n_states;
    let p_pi = policy_average(mdp.p_matrix(), policy, s_n, s_n); // [S,S]
    let mut d = d0.to_vec();
    let stop = DP_TOLERANCE * (1.0 - mdp.gamma);
    for _ in 0..DP_ITERATION_CAP {
        // next[x] = (1-gamma) d0[x] + gamma * sum_s d[s] P_pi[s,x]
        let mut next: Vec<f64> = d0.iter().map(|v| v * (1.0 - mdp.gamma)).collect();
        for s in 0..s_n {
            let w = mdp.gamma * d[s];
            if w == 0.0 {
                continue;
            }
            for (nx, &p) in next.iter_mut().zip(&p_pi[s * s_n..(s + 1) * s_n]) {
                *nx += w * p;
            }
        }
        let delta = d.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        d = next;
        if delta <= stop {
            return Ok(d);
        }
    }
    Err(Error::Convergence { context: "visitation_exact".into(), iterations: DP_ITERATION_CAP })
}

/// L-inf distance between a learned density model m(s,a,x) and the oracle:
/// max |m(s,a,x) * rho(x) - M_oracle(s,a,x)|. The minimizer of the
/// contrastive successor-measure loss satisfies m * rho = M exactly.
pub fn sm_fixed_point_check(mdp: &TabularMdp, policy: &TabularPolicy, m: &[f64]) -> Result<f64> {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    if m.len() != s_n * a_n * s_n {
        return Err(Error::Shape {
            context: "sm_fixed_point_check".into(),
            detail: format!("m has {} entries, expected {}", m.len(), s_n * a_n * s_n),
        });
    }
    let oracle = successor_measure_exact(mdp, policy)?;
    for x in 0..s_n {
        if mdp.rho[x] == 0.0 {
            let reachable = (0..s_n * a_n).any(|row| oracle[row * s_n + x] > 0.0);
            if reachable {
                return Err(Error::InvalidArgument {
                    context: format!("rho({x}) = 0 but state {x} is reachable"),
                });
            }
        }
    }
    let mut err = 0.0f64;
    for row in 0..s_n * a_n {
        for x in 0..s_n {
            let diff = (m[row * s_n + x] * mdp.rho[x] - oracle[row * s_n + x]).abs();
            err = err.max(diff);
        }
    }
    Ok(err)
}
