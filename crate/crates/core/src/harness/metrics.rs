//! Top-1 accuracy, harmonic mean and prediction ensembling.

use crate::datagen::Sample;
use crate::error::{ensure_dim, Error, Result};
use crate::model::LinearModel;
use crate::oracle::ZeroShotOracle;
use crate::prob::ProbVector;

/// Anything that maps a sample to a class distribution.
pub trait Predictor: Sync {
    fn predict_sample(&self, sample: &Sample) -> Result<ProbVector>;
}

impl Predictor for LinearModel {
    fn predict_sample(&self, sample: &Sample) -> Result<ProbVector> {
        self.predict(&sample.x)
    }
}

impl Predictor for ZeroShotOracle {
    fn predict_sample(&self, sample: &Sample) -> Result<ProbVector> {
        self.zero_shot_predict(&sample.x)
    }
}

/// `(1 - lambda) * model + lambda * y_zs`, reading `y_zs` from the sample's
/// cache.
#[derive(Debug, Clone, Copy)]
pub struct Ensemble<'a> {
    pub model: &'a LinearModel,
    pub lambda: f64,
}

impl Predictor for Ensemble<'_> {
    fn predict_sample(&self, sample: &Sample) -> Result<ProbVector> {
        let f = self.model.predict(&sample.x)?;
        let zs = sample
            .y_zs
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("ensemble needs cached zero-shot labels".into()))?;
        ensemble_predict(&f, zs, self.lambda)
    }
}

/// Convex combination of a fine-tuned and a zero-shot prediction. `lambda = 0`
/// returns `f_ft` bit for bit and `lambda = 1` returns `y_zs`.
pub fn ensemble_predict(f_ft: &ProbVector, y_zs: &ProbVector, lambda: f64) -> Result<ProbVector> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("ensemble lambda must lie in [0, 1], got {lambda}")));
    }
    ensure_dim(f_ft.class_count(), y_zs.class_count())?;
    if lambda == 0.0 {
        return Ok(f_ft.clone());
    }
    if lambda == 1.0 {
        return Ok(y_zs.clone());
    }
    let mixed = f_ft
        .probs()
        .iter()
        .zip(y_zs.probs())
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    ProbVector::new(mixed)
}

/// Fraction of samples whose argmax (ties to the lowest index) equals the
/// true class.
pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty split".into()));
    }
    let mut hits = 0usize;
    for s in samples {
        if predictor.predict_sample(s)?.argmax() == s.label.class() {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// `2ab / (a + b)`, and 0 when both are 0.
pub fn harmonic_mean(id_acc: f64, ood_acc: f64) -> Result<f64> {
    for (name, v) in [("id accuracy", id_acc), ("ood accuracy", ood_acc)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidInput(format!("{name} must lie in [0, 1], got {v}")));
        }
    }
    if id_acc + ood_acc == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * id_acc * ood_acc / (id_acc + ood_acc))
}

/// Mean and sample standard deviation (n - 1 denominator; 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
