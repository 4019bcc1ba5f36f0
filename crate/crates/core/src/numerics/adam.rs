use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// ADAM with bias correction.
///
/// Moment buffers are created on the first step and matched to parameters by
/// position, so callers must pass parameters in the same order every step.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update using each parameter's accumulated gradient.
    ///
    /// Gradients are left in place; zeroing them is the caller's job.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.first.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.grad().is_none() {
                return Err(Error::Contract(format!("parameter {} has no gradient", i)));
            }
            if p.numel() != self.first[i].len() {
                return Err(Error::Shape(format!(
                    "parameter {} has {} values, moments have {}",
                    i,
                    p.numel(),
                    self.first[i].len()
                )));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let data = p.data_mut();
            for k in 0..data.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {} after ADAM step", i)));
            }
        }
        Ok(())
    }
}

/// Convenience wrapper: one ADAM step over `params`.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    state.step(params)
}
