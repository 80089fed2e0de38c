//! Adam with bias correction and an exponential per-epoch learning-rate schedule.

use crate::linalg::Matrix;

use super::nn::ParamStore;
use super::tape::TapeError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = store.shapes().iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One Adam update of every slot in `store`.
///
/// Nothing is modified when any gradient is non-finite; the offending parameter is named.
pub fn adam_step(store: &mut ParamStore, grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<(), TapeError> {
    for (slot, g) in grads.iter().enumerate() {
        if g.shape() != store.get(slot).shape() {
            return Err(TapeError::Shape { op: "adam_step", lhs: store.get(slot).shape(), rhs: g.shape() });
        }
        if !g.is_finite() {
            return Err(TapeError::NonFiniteGradient(store.name(slot).to_string()));
        }
    }
    let AdamConfig { beta1, beta2, eps } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (slot, g) in grads.iter().enumerate() {
        let m = state.m[slot].as_mut_slice();
        let v = state.v[slot].as_mut_slice();
        let p = store.get_mut(slot).as_mut_slice();
        for i in 0..p.len() {
            let gi = g.as_slice()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// `lr0 * decay^epoch`.
pub fn lr_schedule(epoch: usize, lr0: f64, decay: f64) -> f64 {
    lr0 * decay.powi(epoch as i32)
}
