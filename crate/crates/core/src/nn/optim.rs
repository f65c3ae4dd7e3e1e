//! Adam optimizer with cosine learning-rate decay and global gradient-norm
//! clipping. State updates go through `Var::set`, keeping the whole training
//! step deterministic on CPU.

use crate::error::Result;
use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global L2 gradient-norm clip.
    pub clip_norm: f64,
    pub warmup_steps: usize,
    /// Total steps for the cosine decay horizon.
    pub total_steps: usize,
    pub lr_min: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            clip_norm: 1.0,
            warmup_steps: 100,
            total_steps: 5000,
            lr_min: 1e-5,
        }
    }
}

impl OptimizerConfig {
    /// Cosine-decayed learning rate with linear warmup.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps > 0 && step < self.warmup_steps {
            return self.lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let t = (step - self.warmup_steps) as f64
            / (self.total_steps.saturating_sub(self.warmup_steps)).max(1) as f64;
        let t = t.clamp(0.0, 1.0);
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

pub struct Adam {
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: usize,
    cfg: OptimizerConfig,
}

impl Adam {
    pub fn new(vars: Vec<Var>, cfg: OptimizerConfig) -> Result<Self> {
        let m = vars
            .iter()
            .map(|v| Tensor::zeros(v.shape(), v.dtype(), v.device()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v_state = vars
            .iter()
            .map(|v| Tensor::zeros(v.shape(), v.dtype(), v.device()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Adam {
            vars,
            m,
            v: v_state,
            step: 0,
            cfg,
        })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.lr_at(self.step)
    }

    /// Apply one update from the given gradients. Returns the pre-clip
    /// global gradient norm.
    pub fn step(&mut self, grads: &GradStore) -> Result<f64> {
        let lr = self.cfg.lr_at(self.step);
        // Global norm over all vars that received a gradient.
        let mut sq_sum = 0f64;
        for var in &self.vars {
            if let Some(g) = grads.get(var.as_tensor()) {
                sq_sum += g
                    .sqr()?
                    .sum_all()?
                    .to_dtype(DType::F64)?
                    .to_scalar::<f64>()?;
            }
        }
        let norm = sq_sum.sqrt();
        let scale = if norm > self.cfg.clip_norm && norm > 0.0 {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        let t = (self.step + 1) as i32;
        let bias1 = 1.0 - self.cfg.beta1.powi(t);
        let bias2 = 1.0 - self.cfg.beta2.powi(t);
        for (i, var) in self.vars.iter().enumerate() {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            let g = (g * scale)?;
            self.m[i] = ((&self.m[i] * self.cfg.beta1)? + (&g * (1.0 - self.cfg.beta1))?)?;
            self.v[i] = ((&self.v[i] * self.cfg.beta2)? + (g.sqr()? * (1.0 - self.cfg.beta2))?)?;
            let m_hat = (&self.m[i] / bias1)?;
            let v_hat = (&self.v[i] / bias2)?;
            let update = (m_hat * lr)?.div(&(v_hat.sqrt()? + self.cfg.eps)?)?;
            let mut next = (var.as_tensor() - update)?;
            if self.cfg.weight_decay > 0.0 {
                next = (next - (var.as_tensor() * (lr * self.cfg.weight_decay))?)?;
            }
            var.set(&next)?;
        }
        self.step += 1;
        Ok(norm)
    }
}
