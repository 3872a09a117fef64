use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr: 1e-3,
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| Tensor::zeros(store.value(id).shape()))
                .collect()
        };
        AdamState {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update using the gradients held in `store`. `lr` overrides the
    /// configured base rate (the scheduler supplies it).
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if lr < 0.0 || !lr.is_finite() {
            return Err(Error::Config(format!("learning rate {lr} must be >= 0")));
        }
        if store.len() != self.first.len() {
            return Err(Error::Contract(
                "optimizer state does not match parameters".into(),
            ));
        }
        for id in store.ids() {
            if store.grad(id).data().iter().any(|g| g.is_nan()) {
                return Err(Error::NanGradient(store.name(id).to_string()));
            }
        }
        self.step += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for id in store.ids() {
            let i = id.index();
            let grad = store.grad(id).data().to_vec();
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let w = store.value_mut(id).data_mut();
            for j in 0..grad.len() {
                let g = grad[j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                w[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `base_lr`, then linear decay to zero at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WarmupLinearSchedule {
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub base_lr: f64,
}

impl WarmupLinearSchedule {
    pub fn new(warmup_fraction: f64, total_steps: usize, base_lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&warmup_fraction) {
            return Err(Error::Config(format!(
                "warmup fraction {warmup_fraction} must lie in [0, 1)"
            )));
        }
        if total_steps == 0 || base_lr <= 0.0 {
            return Err(Error::Config(
                "schedule needs positive total_steps and base_lr".into(),
            ));
        }
        Ok(WarmupLinearSchedule {
            warmup_fraction,
            total_steps,
            base_lr,
        })
    }

    pub fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }

    pub fn lr(&self, step: usize) -> f64 {
        let warm = self.warmup_steps();
        let step = step.min(self.total_steps);
        if step < warm {
            self.base_lr * (step as f64 / warm as f64)
        } else {
            let rest = (self.total_steps - warm) as f64;
            self.base_lr * ((self.total_steps - step) as f64 / rest)
        }
    }
}
