//! Continuous pointmass navigating a four-room arena in [0,1]^2.
//!
//! Semi-implicit Euler: v' = clip(v + a*dt, +-v_max), p' = clip(p + v'*dt).
//! Wall segments are zero-thickness; a step whose path crosses a solid
//! segment keeps the old position on that axis and zeroes that velocity
//! component.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Gaps in the dividing walls, mirroring the gridworld doorway layout.
const GAPS_VERTICAL: [(f64, f64); 2] = [(0.20, 0.35), (0.65, 0.80)];
const GAPS_HORIZONTAL: [(f64, f64); 2] = [(0.20, 0.35), (0.65, 0.80)];
const WALL_X: f64 = 0.5;
const WALL_Y: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl PointState {
    pub fn at(px: f64, py: f64) -> Self {
        PointState { px, py, vx: 0.0, vy: 0.0 }
    }

    pub fn observe(&self) -> Vec<f64> {
        vec![self.px, self.py, self.vx, self.vy]
    }
}

#[derive(Debug, Clone)]
pub struct PointMass {
    pub dt: f64,
    pub v_max: f64,
}

impl Default for PointMass {
    fn default() -> Self {
        PointMass { dt: 0.05, v_max: 1.0 }
    }
}

fn in_gap(coord: f64, gaps: &[(f64, f64)]) -> bool {
    gaps.iter().any(|&(lo, hi)| coord > lo && coord < hi)
}

impl PointMass {
    pub fn obs_dim(&self) -> usize {
        4
    }

    pub fn action_dim(&self) -> usize {
        2
    }

    /// One physics step. Actions are clamped to [-1,1]^2.
    pub fn step(&self, s: &PointState, action: [f64; 2]) -> Result<PointState> {
        if !(s.px.is_finite() && s.py.is_finite() && s.vx.is_finite() && s.vy.is_finite()) {
            return Err(Error::NumericFailure { context: "pointmass state".into() });
        }
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        let mut vx = (s.vx + ax * self.dt).clamp(-self.v_max, self.v_max);
        let mut vy = (s.vy + ay * self.dt).clamp(-self.v_max, self.v_max);
        let mut px = s.px + vx * self.dt;
        let mut py = s.py + vy * self.dt;

        // Vertical divider at x = WALL_X.
        if (s.px - WALL_X).signum() != (px - WALL_X).signum() && s.px != px {
            let t = (WALL_X - s.px) / (px - s.px);
            let y_cross = s.py + t * (py - s.py);
            if !in_gap(y_cross, &GAPS_VERTICAL) {
                px = s.px;
                vx = 0.0;
            }
        }
        // Horizontal divider at y = WALL_Y.
        if (s.py - WALL_Y).signum() != (py - WALL_Y).signum() && s.py != py {
            let t = (WALL_Y - s.py) / (py - s.py);
            let x_cross = s.px + t * (px - s.px);
            if !in_gap(x_cross, &GAPS_HORIZONTAL) {
                py = s.py;
                vy = 0.0;
            }
        }

        px = px.clamp(0.0, 1.0);
        py = py.clamp(0.0, 1.0);
        Ok(PointState { px, py, vx, vy })
    }
}
