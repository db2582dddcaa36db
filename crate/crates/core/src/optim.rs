//! SGD with momentum and learning-rate schedules.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Param, Tensor};

/// `lr0 * 0.5 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: u64, total_steps: u64, lr0: f64) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let t = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (PI * t).cos())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
    /// Multiply by `gamma` at each milestone, given as a fraction of training.
    Step { milestones: Vec<f64>, gamma: f64 },
}

impl LrSchedule {
    pub fn lr(&self, step: u64, total_steps: u64, lr0: f64) -> f64 {
        match self {
            LrSchedule::Cosine => cosine_lr(step, total_steps, lr0),
            LrSchedule::Constant => lr0,
            LrSchedule::Step { milestones, gamma } => {
                let t = if total_steps == 0 { 0.0 } else { step as f64 / total_steps as f64 };
                let passed = milestones.iter().filter(|&&m| t >= m).count();
                lr0 * gamma.powi(passed as i32)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: 0.03,
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && (0.0..1.0).contains(&self.momentum) && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {self:?}")));
        }
        Ok(())
    }
}

/// Heavy-ball SGD: `g += wd * w; v = mu * v + g; w -= lr * v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub config: SgdConfig,
    velocity: Vec<Tensor>,
}

impl Sgd {
    pub fn new(config: SgdConfig) -> Self {
        Self {
            config,
            velocity: Vec::new(),
        }
    }

    /// Applies one update to every parameter yielded by `visit`, in a fixed order.
    pub fn step(&mut self, lr: f64, visit: impl FnOnce(&mut dyn FnMut(&mut Param))) {
        let SgdConfig {
            momentum, weight_decay, ..
        } = self.config;
        let velocity = &mut self.velocity;
        let mut i = 0;
        visit(&mut |p: &mut Param| {
            if velocity.len() <= i {
                velocity.push(Tensor::zeros(p.value.raw_dim()));
            }
            let v = &mut velocity[i];
            ndarray::Zip::from(&mut *v)
                .and(&p.grad)
                .and(&p.value)
                .for_each(|v, &g, &w| *v = momentum * *v + g + weight_decay * w);
            p.value.scaled_add(-lr, v);
            i += 1;
        });
    }

    pub fn state(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn load_state(&mut self, velocity: Vec<Tensor>) {
        self.velocity = velocity;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, IxDyn};

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.03), 0.03);
        assert!(cosine_lr(100, 100, 0.03).abs() < 1e-18);
        assert!((cosine_lr(50, 100, 0.03) - 0.015).abs() < 1e-15);
        assert_eq!(cosine_lr(0, 0, 0.5), 0.5);
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step {
            milestones: vec![0.5, 0.75],
            gamma: 0.1,
        };
        assert_eq!(s.lr(0, 100, 1.0), 1.0);
        assert!((s.lr(50, 100, 1.0) - 0.1).abs() < 1e-15);
        assert!((s.lr(99, 100, 1.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn sgd_matches_hand_recursion() {
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.01,
        };
        let mut opt = Sgd::new(cfg);
        let mut p = Param::new(arr1(&[1.0]).into_dyn());
        let (mut w, mut v) = (1.0f64, 0.0f64);
        for k in 0..5 {
            let g = 0.5 + k as f64;
            p.grad = Tensor::from_elem(IxDyn(&[1]), g);
            opt.step(0.1, |f| f(&mut p));
            v = 0.9 * v + g + 0.01 * w;
            w -= 0.1 * v;
            assert!((p.value[[0]] - w).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut opt = Sgd::new(SgdConfig::default());
        let mut p = Param::new(arr1(&[2.0, -1.0]).into_dyn());
        p.grad.fill(3.0);
        opt.step(0.0, |f| f(&mut p));
        assert_eq!(p.value, arr1(&[2.0, -1.0]).into_dyn());
    }
}
