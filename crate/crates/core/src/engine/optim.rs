//! AdamW with a linear warmup schedule.

use super::mat::Mat;
use super::tape::{Grads, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleTail {
    /// Linear decay to zero at the final step.
    LinearDecay,
    Constant,
}

/// Learning rate at `step` (0-based): linear ramp from 0 over `warmup`
/// steps, then either linear decay to 0 at `total` or constant.
pub fn lr_schedule(step: usize, base_lr: f64, warmup: usize, total: usize, tail: ScheduleTail) -> f64 {
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    match tail {
        ScheduleTail::Constant => base_lr,
        ScheduleTail::LinearDecay => {
            if step >= total || total <= warmup {
                if step == warmup {
                    base_lr
                } else {
                    0.0
                }
            } else {
                base_lr * (total - step) as f64 / (total - warmup) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub tail: ScheduleTail,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 100,
            total_steps: 1000,
            tail: ScheduleTail::LinearDecay,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: usize,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, params: &ParamSet) -> Self {
        let zeros = |ps: &ParamSet| ps.tensors().iter().map(|t| Mat::zeros(t.rows, t.cols)).collect();
        Self {
            cfg,
            m: zeros(params),
            v: zeros(params),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        let c = &self.cfg;
        lr_schedule(self.step, c.lr, c.warmup_steps, c.total_steps, c.tail)
    }

    /// One update. Decay is decoupled: `theta *= 1 - lr_t * wd` happens
    /// before the moment step.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        if grads.tensors.len() != params.len()
            || grads
                .tensors
                .iter()
                .zip(params.tensors())
                .any(|(g, p)| g.shape() != p.shape())
        {
            return Err(Error::ShapeMismatch("gradients do not match parameters".into()));
        }
        let lr = self.current_lr();
        self.step += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                p.data[i] *= 1.0 - lr * c.weight_decay;
                m.data[i] = c.beta1 * m.data[i] + (1.0 - c.beta1) * gi;
                v.data[i] = c.beta2 * v.data[i] + (1.0 - c.beta2) * gi * gi;
                let mh = m.data[i] / bc1;
                let vh = v.data[i] / bc2;
                p.data[i] -= lr * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
