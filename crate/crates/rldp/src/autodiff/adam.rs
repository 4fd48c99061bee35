//! Adam optimizer with bias correction.

use super::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    pub step_count: u64,
    first_moment: ParamStore,
    second_moment: ParamStore,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let mut m = ParamStore::new();
        let mut v = ParamStore::new();
        for (name, t) in params.iter() {
            m.insert(name, Tensor::zeros(t.shape().to_vec())).expect("unique names");
            v.insert(name, Tensor::zeros(t.shape().to_vec())).expect("unique names");
        }
        AdamState {
            step_count: 0,
            first_moment: m,
            second_moment: v,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }
}

/// One Adam update reading each parameter's `grad` buffer.
///
/// A NaN gradient aborts the whole step before any parameter moves, naming
/// the offending parameter.
pub fn adam_step(state: &mut AdamState, params: &mut ParamStore) -> Result<()> {
    for (name, t) in params.iter() {
        let g = t.grad().ok_or_else(|| Error::MissingParam { name: format!("grad for {name}") })?;
        if g.iter().any(|v| v.is_nan()) {
            return Err(Error::NanGradient { name: name.to_string() });
        }
        if g.len() != t.numel() {
            return Err(Error::Shape {
                context: "adam_step".into(),
                detail: format!("grad for {name} has {} values, param has {}", g.len(), t.numel()),
            });
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);

    for (name, p) in params.iter_mut() {
        let g = p.grad().expect("checked above").to_vec();
        let m = state.first_moment.get_mut(name)?;
        for (mv, gv) in m.values_mut().iter_mut().zip(&g) {
            *mv = state.beta1 * *mv + (1.0 - state.beta1) * gv;
        }
        let m_vals = m.values().to_vec();
        let v = state.second_moment.get_mut(name)?;
        for (vv, gv) in v.values_mut().iter_mut().zip(&g) {
            *vv = state.beta2 * *vv + (1.0 - state.beta2) * gv * gv;
        }
        let v_vals = v.values();
        for ((pv, mv), vv) in p.values_mut().iter_mut().zip(&m_vals).zip(v_vals) {
            let m_hat = mv / bc1;
            let v_hat = vv / bc2;
            *pv -= state.learning_rate * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
