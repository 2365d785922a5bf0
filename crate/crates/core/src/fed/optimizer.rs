use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    0.01
}

/// Server-side update rule applied to the aggregated gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// `Θ ← Θ − η·ḡ`.
    #[default]
    Sgd,
    /// Adam with decoupled weight decay.
    Adamw {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
        #[serde(default = "default_weight_decay")]
        weight_decay: f64,
    },
}

impl OptimizerConfig {
    pub fn adamw() -> Self {
        OptimizerConfig::Adamw {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            weight_decay: default_weight_decay(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let OptimizerConfig::Adamw { beta1, beta2, eps, weight_decay } = *self {
            let ok = (0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0 && weight_decay >= 0.0;
            if !ok {
                return Err(Error::Config("federation.optimizer AdamW coefficients out of range".into()));
            }
        }
        Ok(())
    }
}

/// Optimizer state for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: i32,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, len: usize) -> Self {
        let moments = if matches!(cfg, OptimizerConfig::Sgd) { 0 } else { len };
        Self { cfg, m: vec![0.0; moments], v: vec![0.0; moments], steps: 0 }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.steps += 1;
        match self.cfg {
            OptimizerConfig::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerConfig::Adamw { beta1, beta2, eps, weight_decay } => {
                let c1 = 1.0 - beta1.powi(self.steps);
                let c2 = 1.0 - beta2.powi(self.steps);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let step = (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
                    params[i] -= lr * (step + weight_decay * params[i]);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_and_first_adam_step() {
        let mut p = vec![1.0, -2.0];
        Optimizer::new(OptimizerConfig::Sgd, 2).apply(&mut p, &[0.5, 1.0], 0.1);
        assert_eq!(p, vec![0.95, -2.1]);
        // first bias-corrected Adam step moves each coordinate by lr·sign(g)
        let cfg = OptimizerConfig::Adamw { beta1: 0.9, beta2: 0.999, eps: 0.0, weight_decay: 0.0 };
        let mut q = vec![0.0, 0.0];
        Optimizer::new(cfg, 2).apply(&mut q, &[3.0, -0.01], 0.1);
        assert!((q[0] + 0.1).abs() < 1e-12 && (q[1] - 0.1).abs() < 1e-12);
    }
}
