//! Probability, logit and similarity primitives.
//!
//! Every distribution that can reach a logarithm is a [`ProbVector`], whose
//! entries are floored at [`PROB_FLOOR`] and renormalized. Ground-truth labels
//! are kept exact as [`OneHot`].

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};

/// Floor applied to every probability before it may enter a logarithm.
pub const PROB_FLOOR: f64 = 1e-7;

/// Default softmax temperature (cosine scores scaled by 100).
pub const DEFAULT_TEMPERATURE: f64 = 0.01;

const SUM_TOLERANCE: f64 = 1e-9;
const UNIT_TOLERANCE: f64 = 1e-9;

/// Unnormalized class scores. Always finite, at least two classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "logit vector needs at least 2 classes, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "logit {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point on the probability simplex with every entry floored at
/// [`PROB_FLOOR`] (up to the renormalization that follows the floor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates an already-normalized, already-floored distribution without
    /// touching its bits.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        let min_entry = min_floored_entry(probs.len());
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < min_entry || p > 1.0 {
                return Err(Error::InvalidInput(format!(
                    "probability {i} = {p} outside [{min_entry:e}, 1]"
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self(probs))
    }

    pub fn uniform(class_count: usize) -> Result<Self> {
        Self::new(vec![1.0 / class_count as f64; class_count])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn class_count(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        ProbVector::new(value)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(value: ProbVector) -> Self {
        value.0
    }
}

// Smallest entry a floored-then-renormalized vector of length k can hold.
fn min_floored_entry(k: usize) -> f64 {
    PROB_FLOOR / (1.0 + k as f64 * PROB_FLOOR) * (1.0 - 1e-9)
}

/// Exact one-hot ground truth. Not floored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OneHot {
    class: usize,
    class_count: usize,
}

impl OneHot {
    pub fn new(class: usize, class_count: usize) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::InvalidInput(format!(
                "one-hot needs at least 2 classes, got {class_count}"
            )));
        }
        if class >= class_count {
            return Err(Error::InvalidInput(format!(
                "class {class} out of range for {class_count} classes"
            )));
        }
        Ok(Self { class, class_count })
    }

    /// Accepts a dense vector only if it is exactly one-hot.
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        let mut hot = None;
        for (i, &v) in values.iter().enumerate() {
            if v == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if v != 0.0 {
                return Err(Error::InvalidInput(format!(
                    "label vector is not one-hot (entry {i} = {v})"
                )));
            }
        }
        let class = hot.ok_or_else(|| Error::InvalidInput("label vector has no hot entry".into()))?;
        Self::new(class, values.len())
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn get(&self, i: usize) -> f64 {
        if i == self.class {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.class_count).map(|i| self.get(i)).collect()
    }
}

/// A feature or class-embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    values: Vec<f64>,
    unit: bool,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("embedding has non-finite entries".into()));
        }
        Ok(Self {
            values,
            unit: false,
        })
    }

    /// Builds an L2-normalized embedding; the unit flag is set.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(values)?;
        let norm = e.norm();
        if norm == 0.0 {
            return Err(Error::InvalidInput("cannot normalize a zero vector".into()));
        }
        for v in &mut e.values {
            *v /= norm;
        }
        e.unit = true;
        debug_assert!((e.norm() - 1.0).abs() < UNIT_TOLERANCE);
        Ok(e)
    }

    /// Reloads an embedding that was stored after normalization, keeping its
    /// bits and setting the unit flag.
    pub(crate) fn unit_from_stored(values: Vec<f64>) -> Result<Self> {
        let mut e = Self::new(values)?;
        if (e.norm() - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "stored embedding is not unit-norm (norm {})",
                e.norm()
            )));
        }
        e.unit = true;
        Ok(e)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_unit(&self) -> bool {
        self.unit
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax, computed with max-subtraction and then floored
/// onto the simplex.
pub fn softmax(logits: &LogitVector, temperature: f64) -> Result<ProbVector> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let z = logits.values();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| ((v - max) / temperature).exp()).collect();
    let denom: f64 = exps.iter().sum();
    clamp_to_simplex(exps.into_iter().map(|e| e / denom).collect())
}

/// Floors every entry at [`PROB_FLOOR`] and renormalizes.
pub fn clamp_to_simplex(raw: Vec<f64>) -> Result<ProbVector> {
    if raw.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "distribution needs at least 2 classes, got {}",
            raw.len()
        )));
    }
    if raw.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidInput(
            "raw probabilities must be finite and non-negative".into(),
        ));
    }
    if raw.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("cannot normalize an all-zero vector".into()));
    }
    let floored: Vec<f64> = raw.into_iter().map(|v| v.max(PROB_FLOOR)).collect();
    let sum: f64 = floored.iter().sum();
    ProbVector::new(floored.into_iter().map(|v| v / sum).collect())
}

/// Cosine similarity between `x` and each class embedding. Both sides are
/// normalized here regardless of their unit flag.
pub fn cosine_scores(x: &Embedding, class_embeddings: &[Embedding]) -> Result<LogitVector> {
    let x_norm = nonzero_norm(x)?;
    let mut scores = Vec::with_capacity(class_embeddings.len());
    for w in class_embeddings {
        ensure_dim(x.dim(), w.dim())?;
        let w_norm = nonzero_norm(w)?;
        let dot: f64 = x.values().iter().zip(w.values()).map(|(a, b)| a * b).sum();
        scores.push((dot / (x_norm * w_norm)).clamp(-1.0, 1.0));
    }
    LogitVector::new(scores)
}

fn nonzero_norm(e: &Embedding) -> Result<f64> {
    let n = e.norm();
    if n == 0.0 {
        Err(Error::InvalidInput("zero-norm embedding".into()))
    } else {
        Ok(n)
    }
}
