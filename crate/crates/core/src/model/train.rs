//! Mini-batch training of the linear head under any [`LossMode`].

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::optim::{OptimizerConfig, OptimizerState};
use super::LinearModel;
use crate::datagen::{rng_for, Sample, Stream};
use crate::error::{Error, Result};
use crate::losses::{proreg_weight, sample_objective, LossBreakdown, LossMode};
use crate::prob::DEFAULT_TEMPERATURE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Linear warmup over the first 10% of steps.
    #[serde(default)]
    pub warmup: bool,
    /// Stop after this many optimizer steps, if set.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    10
}

fn default_batch_size() -> usize {
    64
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            warmup: false,
            max_steps: None,
            temperature: default_temperature(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be positive".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Per-sample trade-off weight as used by `mode`: 0 for FT, `lambda` for KD,
/// `f_t / (f_t + zs_t)` for ProReg, all read at the current parameters.
pub fn sample_weights(model: &LinearModel, batch: &[&Sample], mode: &LossMode) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|s| match *mode {
            LossMode::Ft => Ok(0.0),
            LossMode::Kd { lambda } => Ok(lambda),
            LossMode::ProReg { .. } => {
                let f = model.predict(&s.x)?;
                proreg_weight(&f, &s.label, zero_shot(s)?)
            }
        })
        .collect()
}

fn zero_shot(s: &Sample) -> Result<&crate::prob::ProbVector> {
    s.y_zs
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("sample has no cached zero-shot label".into()))
}

/// Mean total loss over `batch` with the trade-off weights frozen at
/// `weights`. Used to check parameter gradients numerically.
pub fn batch_loss_with_weights(
    model: &LinearModel,
    batch: &[&Sample],
    mode: &LossMode,
    weights: &[f64],
) -> Result<f64> {
    crate::error::ensure_dim(batch.len(), weights.len())?;
    let alpha = match *mode {
        LossMode::ProReg { alpha } => alpha,
        _ => 1.0,
    };
    let mut total = 0.0;
    for (s, &w) in batch.iter().zip(weights) {
        let f = model.predict(&s.x)?;
        let ce = crate::losses::cross_entropy(&f, &s.label)?;
        let kl = if mode.needs_zero_shot() {
            crate::losses::kl_regularizer(&f, zero_shot(s)?)?
        } else {
            0.0
        };
        total += (1.0 - w) * ce + alpha * w * kl;
    }
    Ok(total / batch.len() as f64)
}

/// Gradient of the batch-mean loss with respect to the flat parameters, with
/// each sample's trade-off weight held constant, plus the mean breakdown.
///
/// With `g` the logit gradient of a sample and `τ` the temperature, the
/// sample contributes `g ⊗ x / τ` to the weights and `g / τ` to the bias.
pub fn parameter_gradient(model: &LinearModel, batch: &[&Sample], mode: &LossMode) -> Result<(Vec<f64>, LossBreakdown)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (k, d) = (model.class_count(), model.feature_dim());
    let scale = 1.0 / (batch.len() as f64 * model.temperature());
    let mut grad = vec![0.0; k * d + k];
    let mut parts = Vec::with_capacity(batch.len());
    for s in batch {
        let f = model.predict(&s.x)?;
        let (loss, g) = sample_objective(mode, &f, &s.label, s.y_zs.as_ref())?;
        let (gw, gb) = grad.split_at_mut(k * d);
        for (c, &gc) in g.values().iter().enumerate() {
            let row = &mut gw[c * d..(c + 1) * d];
            for (slot, &xj) in row.iter_mut().zip(s.x.values()) {
                *slot += gc * xj * scale;
            }
            gb[c] += gc * scale;
        }
        parts.push(loss);
    }
    Ok((grad, LossBreakdown::mean(&parts)))
}

/// One optimizer update on `batch`. Returns the batch-mean loss measured
/// before the update.
pub fn train_step(
    model: &mut LinearModel,
    batch: &[&Sample],
    mode: &LossMode,
    optimizer: &mut OptimizerState,
    lr_scale: f64,
) -> Result<LossBreakdown> {
    let (grad, loss) = parameter_gradient(model, batch, mode)?;
    if !loss.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {} at optimizer step {} (ce {}, kl {}, w {})",
            loss.total,
            optimizer.step_count(),
            loss.ce,
            loss.kl,
            loss.weight
        )));
    }
    optimizer.apply(model.params_mut(), &grad, lr_scale)?;
    if model.params().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "parameters diverged at optimizer step {}",
            optimizer.step_count()
        )));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    /// Mean of the per-step losses within each epoch.
    pub epoch_losses: Vec<LossBreakdown>,
}

/// Trains `model` in place. Samples are reshuffled every epoch from the
/// ChaCha8 shuffle stream of `config.seed`.
pub fn train(model: &mut LinearModel, samples: &[Sample], mode: &LossMode, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    mode.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    let mut optimizer = OptimizerState::new(config.optimizer, model.params().len())?;
    let mut rng = rng_for(config.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let planned = config.epochs * steps_per_epoch;
    let total_steps = config.max_steps.map_or(planned, |m| m.min(planned));
    let warmup_steps = ((total_steps as f64) * 0.1).ceil().max(1.0);

    let mut steps = 0;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    'epochs: for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(steps_per_epoch);
        for chunk in order.chunks(config.batch_size) {
            if steps >= total_steps {
                if !losses.is_empty() {
                    epoch_losses.push(LossBreakdown::mean(&losses));
                }
                break 'epochs;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let lr_scale = if config.warmup {
                ((steps + 1) as f64 / warmup_steps).min(1.0)
            } else {
                1.0
            };
            losses.push(train_step(model, &batch, mode, &mut optimizer, lr_scale)?);
            steps += 1;
        }
        epoch_losses.push(LossBreakdown::mean(&losses));
    }
    Ok(TrainReport { steps, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::central_difference_gradient;
    use crate::model::init_ft;
    use crate::prob::{clamp_to_simplex, Embedding, OneHot};
    use crate::datagen::Split;

    fn sample(x: &[f64], class: usize, k: usize, zs: &[f64]) -> Sample {
        Sample {
            x: Embedding::normalized(x.to_vec()).unwrap(),
            label: OneHot::new(class, k).unwrap(),
            y_zs: Some(clamp_to_simplex(zs.to_vec()).unwrap()),
            split: Split::Train,
        }
    }

    fn toy_batch() -> Vec<Sample> {
        vec![
            sample(&[0.5, -0.2, 0.8, 0.1, 0.3], 0, 3, &[0.2, 0.5, 0.3]),
            sample(&[-0.4, 0.6, 0.1, 0.9, -0.2], 2, 3, &[0.1, 0.1, 0.8]),
            sample(&[0.2, 0.2, -0.7, 0.4, 0.6], 1, 3, &[0.6, 0.3, 0.1]),
            sample(&[0.9, 0.1, 0.1, -0.3, 0.2], 1, 3, &[0.3, 0.4, 0.3]),
        ]
    }

    #[test]
    fn parameter_gradient_matches_finite_differences_in_every_mode() {
        let data = toy_batch();
        let batch: Vec<&Sample> = data.iter().collect();
        let model = init_ft(5, 3, 4, 0.7).unwrap();
        for mode in [LossMode::Ft, LossMode::Kd { lambda: 0.3 }, LossMode::ProReg { alpha: 2.0 }] {
            let weights = sample_weights(&model, &batch, &mode).unwrap();
            let (grad, _) = parameter_gradient(&model, &batch, &mode).unwrap();
            let numeric = central_difference_gradient(
                |p| batch_loss_with_weights(&model.with_params(p.to_vec())?, &batch, &mode, &weights),
                model.params(),
                1e-5,
            )
            .unwrap();
            let err = grad.iter().zip(&numeric).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-5, "{mode:?}: {err}");
        }
    }

    #[test]
    fn single_sample_plain_descent_delta() {
        let s = sample(&[0.3, 0.4, 0.5, -0.1, 0.2], 1, 3, &[0.3, 0.3, 0.4]);
        let mut model = init_ft(5, 3, 9, 1.0).unwrap();
        let before = model.clone();
        let f = before.predict(&s.x).unwrap();
        let lr = 0.05;
        let mut opt = OptimizerState::new(OptimizerConfig::plain_descent(lr), before.params().len()).unwrap();
        train_step(&mut model, &[&s], &LossMode::Ft, &mut opt, 1.0).unwrap();
        for c in 0..3 {
            let g = f.get(c) - s.label.get(c);
            for j in 0..5 {
                let delta = model.row(c)[j] - before.row(c)[j];
                assert!((delta + lr * g * s.x.values()[j]).abs() < 1e-15);
            }
            assert!((model.bias()[c] - before.bias()[c] + lr * g).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_lr_changes_nothing() {
        let data = toy_batch();
        let mut cfg = TrainConfig { epochs: 2, batch_size: 2, ..TrainConfig::default() };
        cfg.optimizer = OptimizerConfig::AdamW { lr: 0.0, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 };
        let mut model = init_ft(5, 3, 1, 0.01).unwrap();
        let before = model.clone();
        train(&mut model, &data, &LossMode::ProReg { alpha: 2.0 }, &cfg).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn full_batch_ft_loss_decreases_on_separable_toy() {
        let mut data = Vec::new();
        for i in 0..30 {
            let c = i % 3;
            let mut x = vec![0.05 * ((i * 7) % 5) as f64; 4];
            x[c] += 1.0;
            data.push(sample(&x, c, 3, &[1.0, 1.0, 1.0]));
        }
        let batch: Vec<&Sample> = data.iter().collect();
        let mut model = init_ft(4, 3, 2, 1.0).unwrap();
        let mut opt = OptimizerState::new(OptimizerConfig::plain_descent(0.1), model.params().len()).unwrap();
        let mut prev = f64::INFINITY;
        for _ in 0..10 {
            let loss = train_step(&mut model, &batch, &LossMode::Ft, &mut opt, 1.0).unwrap();
            assert!(loss.total <= prev);
            prev = loss.total;
        }
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_batch();
        let cfg = TrainConfig { epochs: 3, batch_size: 3, seed: 5, ..TrainConfig::default() };
        let run = || {
            let mut m = init_ft(5, 3, 1, 0.01).unwrap();
            train(&mut m, &data, &LossMode::ProReg { alpha: 2.0 }, &cfg).unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn max_steps_and_warmup() {
        let data = toy_batch();
        let cfg = TrainConfig { epochs: 5, batch_size: 1, max_steps: Some(7), warmup: true, ..TrainConfig::default() };
        let mut m = init_ft(5, 3, 1, 0.01).unwrap();
        let report = train(&mut m, &data, &LossMode::Ft, &cfg).unwrap();
        assert_eq!(report.steps, 7);
        assert_eq!(report.epoch_losses.len(), 2);
    }

    #[test]
    fn regularized_modes_need_cache() {
        let mut s = toy_batch();
        s[0].y_zs = None;
        let mut m = init_ft(5, 3, 1, 0.01).unwrap();
        let r = train(&mut m, &s, &LossMode::Kd { lambda: 0.5 }, &TrainConfig::default());
        assert!(r.is_err());
        assert!(train(&mut m, &[], &LossMode::Ft, &TrainConfig::default()).is_err());
    }
}
