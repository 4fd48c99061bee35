//! Tabular gradient trainers for the contrastive successor-measure loss and
//! the USFA loss, with exact expectations instead of minibatch sampling.
//!
//! Both losses decompose over (s,a) rows once the bootstrap target is frozen,
//! so the per-(s,a) gradient is used directly (dropping the constant
//! positive weight the sampling distribution would contribute). The fixed
//! point is unchanged; the learning rate is just per-row normalized.

use super::{TabularMdp, TabularPolicy};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct TabularTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Hard target refresh period, in steps.
    pub target_refresh: usize,
}

impl Default for TabularTrainConfig {
    fn default() -> Self {
        TabularTrainConfig { steps: 4000, learning_rate: 0.8, target_refresh: 10 }
    }
}

/// Policy-averaged view over actions: out[s,x] = sum_a pi(a|s) table[s,a,x].
fn policy_avg(table: &[f64], policy: &TabularPolicy, s_n: usize, width: usize) -> Vec<f64> {
    let a_n = policy.n_actions;
    let mut out = vec![0.0; s_n * width];
    for s in 0..s_n {
        let pi = policy.row(s);
        for a in 0..a_n {
            let w = pi[a];
            if w == 0.0 {
                continue;
            }
            let src = &table[(s * a_n + a) * width..(s * a_n + a + 1) * width];
            let dst = &mut out[s * width..(s + 1) * width];
            for (d, &v) in dst.iter_mut().zip(src) {
                *d += w * v;
            }
        }
    }
    out
}

/// Gradient descent on the contrastive successor-measure loss
///
/// L(m) = -E_{s,a,s'}[m(s,a,s')] + 1/2 E_{s,a,s+}[(m(s,a,s+) - gamma m_bar(s',pi(s'),s+))^2]
///
/// with exact expectations (s' ~ P(.|s,a), s+ ~ rho) and a periodically
/// hard-copied target m_bar. Training converges to m * rho = M^pi.
///
/// For the learning rate: the per-entry curvature is rho(s+), so stability
/// requires lr * max(rho) < 2. With uniform rho the normalized rate in
/// [0,1] passed here is divided by max(rho) internally.
pub fn train_tabular_sm(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    cfg: &TabularTrainConfig,
) -> Result<Vec<f64>> {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let rows = s_n * a_n;
    let rho_max = mdp.rho.iter().cloned().fold(0.0f64, f64::max);
    let lr = cfg.learning_rate / rho_max;
    let mut m = vec![0.0; rows * s_n];
    let mut target = m.clone();
    for step in 0..cfg.steps {
        if step % cfg.target_refresh == 0 {
            target.copy_from_slice(&m);
        }
        // bootstrap[s', x] = sum_a' pi(a'|s') m_bar(s', a', x)
        let bootstrap = policy_avg(&target, policy, s_n, s_n);
        for s in 0..s_n {
            for a in 0..a_n {
                let p_row = mdp.p_row(s, a);
                // expected bootstrap under s' ~ P(.|s,a)
                let mut boot = vec![0.0; s_n];
                for (sp, &p) in p_row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (b, &t) in boot.iter_mut().zip(&bootstrap[sp * s_n..(sp + 1) * s_n]) {
                        *b += p * t;
                    }
                }
                let row = &mut m[(s * a_n + a) * s_n..(s * a_n + a + 1) * s_n];
                for x in 0..s_n {
                    let grad = -p_row[x] + mdp.rho[x] * (row[x] - mdp.gamma * boot[x]);
                    row[x] -= lr * grad;
                }
            }
        }
    }
    Ok(m)
}

/// Gradient descent on the USFA loss for a fixed policy,
///
/// L(psi) = E_{s,a,s'}[ || psi(s,a) - (phi(s) + gamma psi_bar(s',pi(s'))) ||^2 ],
///
/// with exact expectations and a hard target. The fixed point is anchored at
/// phi(s): psi = phi(s) + gamma P Pi psi.
pub fn train_tabular_usfa(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    phi: &[f64],
    d: usize,
    cfg: &TabularTrainConfig,
) -> Result<Vec<f64>> {
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    debug_assert_eq!(phi.len(), s_n * d);
    let rows = s_n * a_n;
    let mut psi = vec![0.0; rows * d];
    let mut target = psi.clone();
    // curvature of the squared error is 2 per entry
    let lr = cfg.learning_rate / 2.0;
    for step in 0..cfg.steps {
        if step % cfg.target_refresh == 0 {
            target.copy_from_slice(&psi);
        }
        let bootstrap = policy_avg(&target, policy, s_n, d);
        for s in 0..s_n {
            for a in 0..a_n {
                let p_row = mdp.p_row(s, a);
                let mut boot = vec![0.0; d];
                for (sp, &p) in p_row.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for (b, &t) in boot.iter_mut().zip(&bootstrap[sp * d..(sp + 1) * d]) {
                        *b += p * t;
                    }
                }
                let row = &mut psi[(s * a_n + a) * d..(s * a_n + a + 1) * d];
                let phi_s = &phi[s * d..(s + 1) * d];
                for j in 0..d {
                    let grad = 2.0 * (row[j] - phi_s[j] - mdp.gamma * boot[j]);
                    row[j] -= lr * grad;
                }
            }
        }
    }
    Ok(psi)
}
