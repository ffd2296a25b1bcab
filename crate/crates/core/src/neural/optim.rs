//! Adam with a linear warm-up schedule.

use serde::{Deserialize, Serialize};

use super::tensor::{Tensor, Trainable};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Hidden size of the encoder.
    pub dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            warmup_steps: 500,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dim: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.dim == 0 {
            return Err(Error::invalid("train", "batch_size, epochs and dim must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::invalid("adam", "betas must lie in [0, 1) and eps be positive"));
        }
        Ok(())
    }

    /// `lr · min(1, step / warmup_steps)` for 1-based `step`.
    pub fn effective_lr(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default)]
pub struct AdamState<S> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new() -> Self {
        AdamState {
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update at 1-based `step`. Parameters are left untouched on error.
pub fn adam_step<S: Scalar, M: Trainable<S>>(
    params: &mut M,
    grads: &M,
    state: &mut AdamState<S>,
    step: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    if step == 0 {
        return Err(Error::invalid("step", "steps are 1-based"));
    }
    let grads = grads.tensors();
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let mut params = params.tensors_mut();
    if params.len() != grads.len() || params.iter().zip(&grads).any(|(p, g)| p.shape() != g.shape()) {
        return Err(Error::Shape {
            expected: params.iter().map(|p| p.len()).collect(),
            actual: grads.iter().map(|g| g.len()).collect(),
        });
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        state.v = state.m.clone();
    }
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let lr = S::lit(cfg.effective_lr(step));
    let eps = S::lit(cfg.eps);
    let t = step as i32;
    let c1 = S::one() - b1.powi(t);
    let c2 = S::one() - b2.powi(t);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(&grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for (((x, &gi), mi), vi) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.values_mut())
            .zip(v.values_mut())
        {
            *mi = b1 * *mi + (S::one() - b1) * gi;
            *vi = b2 * *vi + (S::one() - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
