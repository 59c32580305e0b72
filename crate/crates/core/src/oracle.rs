//! Synthetic zero-shot predictor standing in for a frozen pretrained model.
//!
//! Its class embeddings are the generator's planted semantic directions,
//! optionally perturbed and renormalized, with exactly zero weight on the
//! context block. It is built from the [`BiasSpec`] alone and never sees a
//! sampled label.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{planted_directions, rng_for, BiasSpec, Dataset, Stream};
use crate::error::{ensure_dim, Error, Result};
use crate::prob::{cosine_scores, softmax, Embedding, ProbVector, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleQuality {
    Clean,
    /// Each class embedding gets `sigma * N(0, I)` added on the semantic block
    /// before renormalization.
    Noisy { sigma: f64 },
}

impl OracleQuality {
    pub fn sigma(&self) -> f64 {
        match *self {
            OracleQuality::Clean => 0.0,
            OracleQuality::Noisy { sigma } => sigma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSpec {
    pub quality: OracleQuality,
    /// `None` falls back to the classifier's temperature.
    pub temperature: Option<f64>,
    pub seed: u64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            quality: OracleQuality::Clean,
            temperature: None,
            seed: 0,
        }
    }
}

impl OracleSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn temperature_or(&self, fallback: f64) -> f64 {
        self.temperature.unwrap_or(fallback)
    }
}

/// Which coordinates the oracle reads, and how perturbed its knowledge is.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeProfile {
    pub semantic_dims: std::ops::Range<usize>,
    pub context_dims: std::ops::Range<usize>,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZeroShotOracle {
    class_embeddings: Vec<Embedding>,
    temperature: f64,
    profile: KnowledgeProfile,
}

/// Builds the oracle for `bias`. The temperature is taken from `oracle`, or
/// the default classifier temperature when unset.
pub fn build_oracle(bias: &BiasSpec, oracle: &OracleSpec) -> Result<ZeroShotOracle> {
    let sigma = oracle.quality.sigma();
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("oracle sigma must be >= 0, got {sigma}")));
    }
    let temperature = oracle.temperature_or(DEFAULT_TEMPERATURE);
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "oracle temperature must be positive, got {temperature}"
        )));
    }
    let dirs = planted_directions(bias)?;
    let mut rng = rng_for(oracle.seed, Stream::Oracle);
    let mut class_embeddings = Vec::with_capacity(bias.class_count);
    for s in &dirs.semantic {
        let mut v = vec![0.0; bias.feature_dim()];
        for (slot, &si) in v.iter_mut().zip(s) {
            // Draw even when sigma == 0 so the stream is shared across sigmas.
            let g: f64 = rng.sample(StandardNormal);
            *slot = si + sigma * g;
        }
        class_embeddings.push(Embedding::normalized(v)?);
    }
    Ok(ZeroShotOracle {
        class_embeddings,
        temperature,
        profile: KnowledgeProfile {
            semantic_dims: 0..bias.semantic_dim,
            context_dims: bias.semantic_dim..bias.feature_dim(),
            sigma,
        },
    })
}

impl ZeroShotOracle {
    pub fn class_embeddings(&self) -> &[Embedding] {
        &self.class_embeddings
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn profile(&self) -> &KnowledgeProfile {
        &self.profile
    }

    pub fn class_count(&self) -> usize {
        self.class_embeddings.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.class_embeddings[0].dim()
    }

    /// `softmax(cos(x, w_k) / temperature)`.
    pub fn zero_shot_predict(&self, x: &Embedding) -> Result<ProbVector> {
        ensure_dim(self.feature_dim(), x.dim())?;
        softmax(&cosine_scores(x, &self.class_embeddings)?, self.temperature)
    }

    /// Attaches `y_zs` to every sample. Computed once; the labels stay fixed
    /// for the rest of the run.
    pub fn cache_zero_shot_labels(&self, dataset: &mut Dataset, spec: &OracleSpec) -> Result<()> {
        ensure_dim(self.feature_dim(), dataset.spec.feature_dim())?;
        ensure_dim(self.class_count(), dataset.spec.class_count)?;
        for s in dataset.samples_mut() {
            s.y_zs = Some(self.zero_shot_predict(&s.x)?);
        }
        dataset.oracle = Some(*spec);
        Ok(())
    }
}
