use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// `peak · min(step / warmup, sqrt(warmup / step))`; linear warm-up then
/// inverse square-root decay. Steps start at 1.
pub fn lr_schedule(step: u64, peak: f64, warmup: u64) -> f64 {
    let (s, w) = (step.max(1) as f64, warmup.max(1) as f64);
    peak * f64::min(s / w, libm::sqrt(w / s))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-8 }
    }
}

/// First/second moments of one parameter and the number of updates it received.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Bias-corrected Adam. A parameter without a gradient in an update is
/// skipped entirely: its value, moments and step count stay as they are.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    slots: Vec<Option<AdamSlot>>,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Self {
        Self { config, slots: vec![None; n_params] }
    }

    pub fn slot(&self, id: ParamId) -> Option<&AdamSlot> {
        self.slots.get(id.index()).and_then(Option::as_ref)
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Tensor)], lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::Config(alloc::format!("learning rate {lr} must be nonnegative")));
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (id, grad) in grads {
            let value = store.get_mut(*id);
            if value.shape() != grad.shape() {
                return Err(Error::Mismatch(alloc::format!(
                    "gradient shape {:?} for parameter of shape {:?}",
                    grad.shape(),
                    value.shape()
                )));
            }
            let n = value.numel();
            let slot = self.slots[id.index()].get_or_insert_with(|| AdamSlot { m: vec![0.0; n], v: vec![0.0; n], step: 0 });
            slot.step += 1;
            let c1 = 1.0 - libm::pow(beta1, slot.step as f64);
            let c2 = 1.0 - libm::pow(beta2, slot.step as f64);
            for (((p, g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(&mut slot.m).zip(&mut slot.v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm of all gradients.
pub fn global_norm(grads: &[(ParamId, Tensor)]) -> f64 {
    libm::sqrt(grads.iter().flat_map(|(_, g)| g.data()).map(|v| v * v).sum())
}

/// Rescales all gradients so their global norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [(ParamId, Tensor)], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
