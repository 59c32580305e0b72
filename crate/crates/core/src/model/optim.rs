//! Optimizers over a flat parameter buffer.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    /// Adam moments with decoupled weight decay:
    /// `θ ← θ - lr·wd·θ - lr·m̂ / (sqrt(v̂) + eps)`.
    #[serde(rename = "adamw")]
    AdamW {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        weight_decay: f64,
    },
    /// Heavy-ball momentum, `v ← μ v + g; θ ← θ - lr·wd·θ - lr·v`.
    /// With `momentum = 0` and `weight_decay = 0` this is plain descent.
    Momentum { lr: f64, momentum: f64, weight_decay: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::AdamW {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl OptimizerConfig {
    pub fn plain_descent(lr: f64) -> Self {
        OptimizerConfig::Momentum { lr, momentum: 0.0, weight_decay: 0.0 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::AdamW { lr, .. } | OptimizerConfig::Momentum { lr, .. } => lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::InvalidParameter(msg.to_string())) };
        match *self {
            OptimizerConfig::AdamW { lr, beta1, beta2, eps, weight_decay } => {
                check(lr >= 0.0 && lr.is_finite(), "lr must be >= 0")?;
                check((0.0..1.0).contains(&beta1), "beta1 must lie in [0, 1)")?;
                check((0.0..1.0).contains(&beta2), "beta2 must lie in [0, 1)")?;
                check(eps > 0.0, "eps must be positive")?;
                check(weight_decay >= 0.0, "weight_decay must be >= 0")
            }
            OptimizerConfig::Momentum { lr, momentum, weight_decay } => {
                check(lr >= 0.0 && lr.is_finite(), "lr must be >= 0")?;
                check((0.0..1.0).contains(&momentum), "momentum must lie in [0, 1)")?;
                check(weight_decay >= 0.0, "weight_decay must be >= 0")
            }
        }
    }
}

/// Per-parameter accumulators. `first` holds Adam's first moment or the
/// momentum buffer; `second` is empty for momentum.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: OptimizerConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        let second = match config {
            OptimizerConfig::AdamW { .. } => vec![0.0; param_count],
            OptimizerConfig::Momentum { .. } => Vec::new(),
        };
        Ok(Self { config, first: vec![0.0; param_count], second, step: 0 })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update with learning rate `lr_scale * config.lr`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr_scale: f64) -> Result<()> {
        ensure_dim(self.first.len(), params.len())?;
        ensure_dim(params.len(), grad.len())?;
        self.step += 1;
        match self.config {
            OptimizerConfig::AdamW { lr, beta1, beta2, eps, weight_decay } => {
                let lr = lr * lr_scale;
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.first[i] = beta1 * self.first[i] + (1.0 - beta1) * g;
                    self.second[i] = beta2 * self.second[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.first[i] / c1;
                    let v_hat = self.second[i] / c2;
                    params[i] -= lr * weight_decay * params[i];
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
            OptimizerConfig::Momentum { lr, momentum, weight_decay } => {
                let lr = lr * lr_scale;
                for i in 0..params.len() {
                    self.first[i] = momentum * self.first[i] + grad[i];
                    params[i] -= lr * weight_decay * params[i];
                    params[i] -= lr * self.first[i];
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_lr_leaves_params_alone() {
        let mut p = vec![0.3, -1.2, 4.0];
        let orig = p.clone();
        let cfg = OptimizerConfig::AdamW { lr: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
        let mut s = OptimizerState::new(cfg, 3).unwrap();
        s.apply(&mut p, &[1.0, -2.0, 0.5], 1.0).unwrap();
        assert_eq!(p, orig);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_adamw_step_is_sign_step() {
        // After one step m̂ = g and v̂ = g², so the move is lr * g / (|g| + eps).
        let mut p = vec![1.0, 1.0];
        let cfg = OptimizerConfig::AdamW { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        let mut s = OptimizerState::new(cfg, 2).unwrap();
        s.apply(&mut p, &[3.0, -0.5], 1.0).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-8);
        assert!((p[1] - 1.1).abs() < 1e-7);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient() {
        let mut p = vec![2.0];
        let cfg = OptimizerConfig::AdamW { lr: 0.1, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.5 };
        let mut s = OptimizerState::new(cfg, 1).unwrap();
        s.apply(&mut p, &[0.0], 1.0).unwrap();
        assert!((p[0] - 1.9).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = vec![0.0];
        let mut s = OptimizerState::new(OptimizerConfig::Momentum { lr: 1.0, momentum: 0.5, weight_decay: 0.0 }, 1).unwrap();
        s.apply(&mut p, &[1.0], 1.0).unwrap();
        s.apply(&mut p, &[1.0], 1.0).unwrap();
        assert_eq!(p[0], -2.5);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(OptimizerState::new(OptimizerConfig::plain_descent(-1.0), 1).is_err());
        let bad = OptimizerConfig::AdamW { lr: 1e-3, beta1: 1.0, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 };
        assert!(OptimizerState::new(bad, 1).is_err());
        let mut s = OptimizerState::new(OptimizerConfig::default(), 2).unwrap();
        assert!(s.apply(&mut [0.0; 3], &[0.0; 3], 1.0).is_err());
    }
}
