use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::Scalar;
use crate::error::{ensure_arg, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// Adam with bias correction. Moments are kept in `f64` regardless of the
/// parameter precision.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.tensor.shape().numel()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// Parameters without a gradient are left unchanged.
    pub fn step<T: Scalar>(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        ensure_arg!(store.len() == self.m.len(), "optimizer state does not match parameter store");
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = p.tensor.grad().map(|g| g.to_vec()) else {
                continue;
            };
            for (((x, g), m), v) in p.tensor.data_mut().iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                let g = g.as_f64();
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let update = lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                *x = T::of(x.as_f64() - update);
            }
            p.tensor.clear_grad();
        }
        Ok(())
    }
}
