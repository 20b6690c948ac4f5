//! Learning-rate schedule and the AdamW update.

use crate::{Error, Result};

use super::{TowerParams, TrainConfig};

/// Learning rate at a 0-based step: linear warmup from 0 over
/// `ceil(warmup_ratio * total_steps)` steps, then cosine decay to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    let total = cfg.total_steps;
    let warmup = (cfg.warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return cfg.lr0 * step as f64 / warmup as f64;
    }
    if total <= warmup {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (total - warmup) as f64;
    cfg.lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// First and second moment accumulators of AdamW.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of completed optimizer steps.
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One decoupled-weight-decay Adam update, in place.
///
/// Weight decay applies only to entries flagged in the params' decay mask
/// (weights; never biases or the temperature).
pub fn adamw_step(
    params: &mut TowerParams,
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::dimension("gradient vector", params.len(), grads.len()));
    }
    if state.m.len() != params.len() {
        return Err(Error::dimension("optimizer state", params.len(), state.m.len()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradients".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = params.decay_mask();
    let data = params.data_mut();
    for i in 0..data.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let mut update = lr * m_hat / (v_hat.sqrt() + cfg.eps);
        if decay[i] {
            update += lr * cfg.weight_decay * data[i];
        }
        data[i] -= update;
    }
    Ok(())
}
