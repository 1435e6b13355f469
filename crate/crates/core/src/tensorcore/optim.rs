use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Exponential decay from `initial` to `initial * final_fraction` over
/// `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub final_fraction: f64,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            final_fraction: 0.01,
            total_epochs: 300,
        }
    }
}

impl LrSchedule {
    /// Learning rate at a (possibly fractional) epoch position.
    pub fn at(&self, epoch: f64) -> f64 {
        if self.total_epochs == 0 {
            return self.initial;
        }
        let t = (epoch / self.total_epochs as f64).clamp(0.0, 1.0);
        self.initial * self.final_fraction.powf(t)
    }
}

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config }
    }

    /// One bias-corrected Adam update at learning rate `lr`.
    pub fn step(
        &self,
        params: &mut [Tensor],
        grads: &[Tensor],
        state: &mut OptimizerState,
        lr: f64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != state.m.len() {
            return Err(Error::Contract(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                state.m.len()
            )));
        }
        state.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = state.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            let m = state.m[i].data_mut();
            let v = state.v[i].data_mut();
            for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
