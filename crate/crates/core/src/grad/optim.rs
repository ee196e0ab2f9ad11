//! Adam and the one-cycle learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{input, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
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

/// Moment buffers and step counter for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self { config, first: vec![0.0; num_params], second: vec![0.0; num_params], step: 0 }
    }

    /// One bias-corrected Adam update. Entries where `mask` is false are
    /// left untouched, moments included.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, mask: Option<&[bool]>) -> Result<()> {
        let n = self.first.len();
        if params.len() != n || grads.len() != n || mask.is_some_and(|m| m.len() != n) {
            return input(format!(
                "shape mismatch: {} moments, {} params, {} gradients",
                n,
                params.len(),
                grads.len()
            ));
        }
        if !(lr > 0.0) {
            return input(format!("learning rate must be positive, got {lr}"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for i in 0..n {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i];
            self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
            self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first[i] / c1;
            let v_hat = self.second[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Shape of the one-cycle schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneCycle {
    /// Fraction of the steps spent warming up.
    pub warmup_frac: f64,
    /// Starting rate is `peak / initial_div`.
    pub initial_div: f64,
    /// Terminal rate is `peak / final_div`.
    pub final_div: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self { warmup_frac: 0.3, initial_div: 25.0, final_div: 1e4 }
    }
}

impl OneCycle {
    pub fn lr(&self, step: usize, total_steps: usize, peak_lr: f64) -> Result<f64> {
        if step > total_steps {
            return input(format!("step {step} beyond schedule length {total_steps}"));
        }
        let t = step as f64;
        let warm = self.warmup_frac * total_steps as f64;
        let start = peak_lr / self.initial_div;
        let end = peak_lr * self.final_div.recip();
        if t <= warm {
            if warm == 0.0 {
                return Ok(peak_lr);
            }
            let phase = t / warm;
            Ok(start + (peak_lr - start) * 0.5 * (1.0 - (std::f64::consts::PI * phase).cos()))
        } else {
            let phase = (t - warm) / (total_steps as f64 - warm);
            if phase >= 1.0 {
                return Ok(end);
            }
            Ok(end + (peak_lr - end) * 0.5 * (1.0 + (std::f64::consts::PI * phase).cos()))
        }
    }
}

/// Default one-cycle schedule: 30% cosine warmup, cosine decay to `peak·1e-4`.
pub fn one_cycle_lr(step: usize, total_steps: usize, peak_lr: f64) -> Result<f64> {
    OneCycle::default().lr(step, total_steps, peak_lr)
}
