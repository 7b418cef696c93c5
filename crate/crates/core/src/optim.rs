//! AdamW with cosine-annealed learning rate.

use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer as _, ParamsAdamW};
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
    /// Floor of the cosine schedule.
    pub min_lr: f64,
    pub schedule: LrSchedule,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Cosine,
    Constant,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.2,
            eps: 1e-8,
            min_lr: 0.0,
            schedule: LrSchedule::Cosine,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate at `step` (0-based) of a `total`-step run.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let progress = step as f64 / total.max(1) as f64;
                self.min_lr
                    + 0.5
                        * (self.lr - self.min_lr)
                        * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

pub struct Trainer {
    opt: AdamW,
    config: OptimizerConfig,
    total_steps: usize,
    step: usize,
}

impl Trainer {
    pub fn new(vars: Vec<Var>, config: &OptimizerConfig, total_steps: usize) -> Result<Self> {
        let params = ParamsAdamW {
            lr: config.lr_at(0, total_steps),
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            weight_decay: config.weight_decay,
        };
        Ok(Trainer {
            opt: AdamW::new(vars, params)?,
            config: config.clone(),
            total_steps,
            step: 0,
        })
    }

    /// Backpropagates `loss`, applies one update and advances the schedule.
    /// Returns the learning rate used.
    pub fn step(&mut self, loss: &Tensor) -> Result<f64> {
        let lr = self.config.lr_at(self.step, self.total_steps);
        self.opt.set_learning_rate(lr);
        self.opt.backward_step(loss)?;
        self.step += 1;
        Ok(lr)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }
}
