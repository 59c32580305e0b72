//! Linear classification head over fixed features.

pub mod checkpoint;
pub mod optim;
pub mod train;

use rand::Rng;

use crate::datagen::{rng_for, Stream};
use crate::error::{ensure_dim, Error, Result};
use crate::prob::{softmax, Embedding, LogitVector, ProbVector};

/// `probs = softmax((W x + b) / temperature)`.
///
/// Parameters live in one flat buffer: the `class_count x feature_dim`
/// weight matrix in row-major order, followed by the bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    class_count: usize,
    feature_dim: usize,
    temperature: f64,
    params: Vec<f64>,
}

impl LinearModel {
    pub fn new(weights: Vec<f64>, bias: Vec<f64>, temperature: f64) -> Result<Self> {
        let class_count = bias.len();
        if class_count < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 classes, got {class_count}")));
        }
        if weights.is_empty() || weights.len() % class_count != 0 {
            return Err(Error::InvalidInput(format!(
                "weight buffer of length {} does not fit {class_count} rows",
                weights.len()
            )));
        }
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
        }
        let feature_dim = weights.len() / class_count;
        let mut params = weights;
        params.extend(bias);
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { class_count, feature_dim, temperature, params })
    }

    pub fn zeros(feature_dim: usize, class_count: usize, temperature: f64) -> Result<Self> {
        Self::new(vec![0.0; feature_dim * class_count], vec![0.0; class_count], temperature)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn weights(&self) -> &[f64] {
        &self.params[..self.class_count * self.feature_dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.class_count * self.feature_dim..]
    }

    pub fn row(&self, class: usize) -> &[f64] {
        &self.params[class * self.feature_dim..(class + 1) * self.feature_dim]
    }

    /// Flat parameter view: weights (row-major) then bias.
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Copy of this model with a different flat parameter vector.
    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        ensure_dim(self.params.len(), params.len())?;
        Ok(Self { params, ..self.clone() })
    }

    /// Raw logits `W x + b` and the tempered softmax over them.
    pub fn forward(&self, x: &Embedding) -> Result<(LogitVector, ProbVector)> {
        ensure_dim(self.feature_dim, x.dim())?;
        let logits: Vec<f64> = (0..self.class_count)
            .map(|k| {
                let dot: f64 = self.row(k).iter().zip(x.values()).map(|(w, v)| w * v).sum();
                dot + self.bias()[k]
            })
            .collect();
        let logits = LogitVector::new(logits)
            .map_err(|e| Error::NonFinite(format!("forward pass produced bad logits: {e}")))?;
        let probs = softmax(&logits, self.temperature)?;
        Ok((logits, probs))
    }

    pub fn predict(&self, x: &Embedding) -> Result<ProbVector> {
        self.forward(x).map(|(_, p)| p)
    }

    pub fn predict_batch(&self, xs: &[Embedding]) -> Result<Vec<ProbVector>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }
}

/// Randomly initialized head: weights uniform in `[-1/sqrt(d), 1/sqrt(d)]`
/// from ChaCha8 (`seed`, init stream), bias zero.
pub fn init_ft(feature_dim: usize, class_count: usize, seed: u64, temperature: f64) -> Result<LinearModel> {
    if feature_dim == 0 {
        return Err(Error::InvalidInput("feature_dim must be positive".into()));
    }
    let bound = 1.0 / (feature_dim as f64).sqrt();
    let mut rng = rng_for(seed, Stream::Init);
    let weights = (0..feature_dim * class_count)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    LinearModel::new(weights, vec![0.0; class_count], temperature)
}

/// Head whose rows are the oracle's class embeddings, bias zero. Before any
/// update it reproduces the zero-shot prediction.
pub fn init_ft_plus(class_embeddings: &[Embedding], class_count: usize, temperature: f64) -> Result<LinearModel> {
    if class_embeddings.len() != class_count {
        return Err(Error::InvalidInput(format!(
            "expected {class_count} class embeddings, got {}",
            class_embeddings.len()
        )));
    }
    let dim = class_embeddings
        .first()
        .map(Embedding::dim)
        .ok_or_else(|| Error::InvalidInput("no class embeddings".into()))?;
    let mut weights = Vec::with_capacity(dim * class_count);
    for e in class_embeddings {
        ensure_dim(dim, e.dim())?;
        let n = e.norm();
        if n == 0.0 {
            return Err(Error::InvalidInput("zero-norm class embedding".into()));
        }
        if e.is_unit() {
            weights.extend_from_slice(e.values());
        } else {
            weights.extend(e.values().iter().map(|v| v / n));
        }
    }
    LinearModel::new(weights, vec![0.0; class_count], temperature)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Embedding {
        Embedding::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LinearModel::zeros(4, 3, 0.01).unwrap();
        let p = m.predict(&unit(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        for &q in p.probs() {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn aligned_row_dominates() {
        let m = LinearModel::new(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
            0.01,
        )
        .unwrap();
        let p = m.predict(&unit(&[0.0, 1.0, 0.0])).unwrap();
        assert!(p.get(1) > 1.0 - 1e-6);
    }

    #[test]
    fn logits_match_matrix_vector_product() {
        let m = init_ft(6, 4, 17, 0.5).unwrap();
        let m = m.with_params(m.params().iter().enumerate().map(|(i, v)| v + 0.01 * i as f64).collect()).unwrap();
        let x = unit(&[0.3, -0.2, 0.9, 0.1, -0.5, 0.4]);
        let (logits, probs) = m.forward(&x).unwrap();
        for k in 0..4 {
            let mut acc = 0.0;
            for j in 0..6 {
                acc += m.params()[k * 6 + j] * x.values()[j];
            }
            acc += m.params()[24 + k];
            assert!((logits.values()[k] - acc).abs() < 1e-12);
        }
        assert_eq!(probs, m.predict(&x).unwrap());
    }

    #[test]
    fn argmax_ignores_temperature() {
        let m = init_ft(5, 4, 3, 1.0).unwrap();
        let x = unit(&[0.1, 0.2, -0.3, 0.4, 0.5]);
        let hot = m.predict(&x).unwrap().argmax();
        for t in [0.001, 0.01, 0.3, 10.0] {
            let mt = LinearModel::new(m.weights().to_vec(), m.bias().to_vec(), t).unwrap();
            assert_eq!(mt.predict(&x).unwrap().argmax(), hot);
        }
    }

    #[test]
    fn batch_equals_single() {
        let m = init_ft(3, 3, 1, 0.1).unwrap();
        let xs = vec![unit(&[1.0, 0.0, 0.2]), unit(&[0.0, 1.0, 0.5]), unit(&[0.3, 0.3, 0.3])];
        let batch = m.predict_batch(&xs).unwrap();
        for (x, p) in xs.iter().zip(batch) {
            assert_eq!(p, m.predict(x).unwrap());
        }
    }

    #[test]
    fn dimension_mismatch() {
        let m = init_ft(3, 2, 1, 1.0).unwrap();
        assert!(matches!(m.forward(&unit(&[1.0, 0.0])), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn init_ft_is_seeded() {
        assert_eq!(init_ft(20, 5, 42, 0.01).unwrap(), init_ft(20, 5, 42, 0.01).unwrap());
        assert_ne!(init_ft(20, 5, 42, 0.01).unwrap(), init_ft(20, 5, 43, 0.01).unwrap());
        assert!(init_ft(20, 5, 1, 0.01).unwrap().bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_ft_weights_zero_mean() {
        // 10^5 draws from U(-b, b): std b / sqrt(3), so the mean sits within
        // 3 * b / sqrt(3 n).
        let m = init_ft(1000, 100, 7, 0.01).unwrap();
        let n = m.weights().len() as f64;
        let bound = 1.0 / 1000f64.sqrt();
        let mean = m.weights().iter().sum::<f64>() / n;
        assert!(mean.abs() < 3.0 * bound / (3.0 * n).sqrt(), "mean {mean}");
        assert!(m.weights().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn init_ft_plus_checks_class_count() {
        let e = vec![unit(&[1.0, 0.0]), unit(&[0.0, 1.0])];
        assert!(init_ft_plus(&e, 3, 0.01).is_err());
        let m = init_ft_plus(&e, 2, 0.01).unwrap();
        assert_eq!(m.row(1), &[0.0, 1.0]);
    }
}
