//! Adam with coupled L2 penalty, and a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("expected {expected} gradients, got {got}")]
    GradientCount { expected: usize, got: usize },
    #[error("gradient {index} has shape {grad:?}, parameter has {param:?}")]
    GradientShape {
        index: usize,
        grad: Vec<usize>,
        param: Vec<usize>,
    },
    #[error("monitored metric is not finite ({0}); training diverged")]
    Divergence(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Coupled L2 coefficient: `g ← g + l2·θ` before the moment updates.
    pub l2: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    pub lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    /// Allocates moment buffers shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let sizes: Vec<usize> = params.into_iter().map(Tensor::numel).collect();
        Adam {
            lr: config.lr,
            config,
            step: 0,
            first: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), OptimError> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(OptimError::GradientCount {
                expected: self.first.len(),
                got: grads.len().min(params.len()),
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.numel() != self.first[i].len() {
                return Err(OptimError::GradientShape {
                    index: i,
                    grad: g.shape().to_vec(),
                    param: p.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (j, (theta, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let grad = gj + c.l2 * *theta;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * grad;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * grad * grad;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *theta -= self.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlateauConfig {
    /// Non-improving epochs tolerated; the rate drops on the next one.
    pub patience: usize,
    pub factor: f64,
    /// Minimum absolute decrease that counts as an improvement.
    pub threshold: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            patience: 2,
            factor: 0.1,
            threshold: 1e-4,
            min_lr: 1e-6,
        }
    }
}

/// Reduce-on-plateau schedule over a metric that should decrease.
#[derive(Clone, Debug)]
pub struct Plateau {
    pub config: PlateauConfig,
    best: f64,
    bad_epochs: usize,
}

impl Plateau {
    pub fn new(config: PlateauConfig) -> Self {
        Plateau {
            config,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one epoch's metric and returns the learning rate to use next.
    pub fn update(&mut self, metric: f64, lr: f64) -> Result<f64, OptimError> {
        if !metric.is_finite() {
            return Err(OptimError::Divergence(metric));
        }
        if metric < self.best - self.config.threshold {
            self.best = metric;
            self.bad_epochs = 0;
            return Ok(lr);
        }
        self.bad_epochs += 1;
        if self.bad_epochs > self.config.patience {
            self.bad_epochs = 0;
            return Ok((lr * self.config.factor).max(self.config.min_lr).min(lr));
        }
        Ok(lr)
    }
}
