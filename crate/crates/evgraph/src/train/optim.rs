//! Decoupled-weight-decay adaptive-moment optimizer and the one-cycle
//! learning-rate schedule with linear warm-up and linear annealing.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{is_buffer, ModelParams};
use crate::tape::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub max_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub total_steps: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    /// Fraction of steps spent warming up to the peak rate.
    pub warmup_frac: f64,
    /// Initial rate divisor: lr(0) = max_lr / div_start.
    pub div_start: f64,
    /// Final rate divisor: lr(total) = max_lr / div_final.
    pub div_final: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_lr: 4e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            total_steps: 175_000,
            batch_size: 24,
            warmup_frac: 0.3,
            div_start: 25.0,
            div_final: 1e4,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_lr <= 0.0 || self.total_steps == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "learning rate, steps, and batch size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One-cycle rate at a step: linear warm-up from `max/div_start` over the
/// first `warmup_frac` of steps, then linear annealing to `max/div_final`.
pub fn lr_at(step: usize, cfg: &OptimizerConfig) -> f64 {
    let total = cfg.total_steps.max(1) as f64;
    let peak_at = (cfg.warmup_frac * total).max(1.0);
    let s = (step as f64).min(total);
    if s <= peak_at {
        let start = cfg.max_lr / cfg.div_start;
        start + (cfg.max_lr - start) * (s / peak_at)
    } else {
        let end = cfg.max_lr / cfg.div_final;
        cfg.max_lr + (end - cfg.max_lr) * ((s - peak_at) / (total - peak_at))
    }
}

/// First and second moment estimates per parameter.
#[derive(Debug, Default, Clone)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub steps_taken: usize,
}

/// Applies one update. `grads` maps parameter names to gradients; a
/// non-finite gradient aborts the step untouched.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    cfg: &OptimizerConfig,
    step: usize,
) -> Result<f64> {
    for (name, g) in grads {
        if !g.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite gradient for `{name}` at step {step}"
            )));
        }
    }
    let lr = lr_at(step, cfg);
    let t = (step + 1) as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (name, p) in params.iter_mut() {
        if is_buffer(name) {
            continue;
        }
        let Some(g) = grads.get(name) else { continue };
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.rows, p.cols));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(p.rows, p.cols));
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
            v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            p.data[i] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * p.data[i]);
        }
    }
    state.steps_taken += 1;
    Ok(lr)
}
