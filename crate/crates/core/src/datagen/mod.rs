//! Synthetic contextual-bias classification tasks.
//!
//! Every class `k` owns a planted unit semantic direction `s_k` (in the first
//! `semantic_dim` coordinates) and a linked unit context direction `c_k` (in
//! the last `context_dim` coordinates). The two blocks are disjoint, so every
//! context direction is orthogonal to every semantic direction.
//!
//! A sample of class `k` is `normalize((s_k + noise) ⊕ c_j)` where `j = k`
//! with probability `bias_strength` (train and ID test) or `ood_bias` (OOD
//! test), and otherwise a uniformly drawn other class.
//!
//! Randomness comes from ChaCha8 seeded with `seed` via `seed_from_u64`, with
//! one stream per purpose (see [`Stream`]).

pub mod format;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::OracleSpec;
use crate::prob::{Embedding, OneHot, ProbVector};

/// ChaCha stream identifiers. A given `(seed, stream)` pair always yields the
/// same sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Directions = 0,
    Train = 1,
    IdTest = 2,
    OodTest = 3,
    Oracle = 16,
    Init = 32,
    Shuffle = 33,
}

pub fn rng_for(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Missing JSON fields take their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    pub class_count: usize,
    pub semantic_dim: usize,
    pub context_dim: usize,
    pub train_size: usize,
    pub id_test_size: usize,
    pub ood_test_size: usize,
    /// Probability that a train / ID-test sample shows its own class context.
    pub bias_strength: f64,
    /// Same probability for the OOD split; `None` means `1 / class_count`.
    pub ood_bias: Option<f64>,
    /// Forces the OOD context to always be another class's (`ood_bias = 0`).
    pub adversarial: bool,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        Self {
            class_count: 5,
            semantic_dim: 10,
            context_dim: 10,
            train_size: 2000,
            id_test_size: 1000,
            ood_test_size: 1000,
            bias_strength: 0.95,
            ood_bias: None,
            adversarial: false,
            noise_std: 0.4,
            seed: 0,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.class_count < 2 {
            return bad(format!("class_count must be at least 2, got {}", self.class_count));
        }
        if self.semantic_dim == 0 || self.context_dim == 0 {
            return bad("semantic_dim and context_dim must be positive".into());
        }
        if self.train_size == 0 || self.id_test_size == 0 || self.ood_test_size == 0 {
            return bad("split sizes must be positive".into());
        }
        for (name, v) in [("bias_strength", Some(self.bias_strength)), ("ood_bias", self.ood_bias)] {
            if let Some(v) = v {
                if !(0.0..=1.0).contains(&v) {
                    return bad(format!("{name} must lie in [0, 1], got {v}"));
                }
            }
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.semantic_dim + self.context_dim
    }

    pub fn effective_ood_bias(&self) -> f64 {
        if self.adversarial {
            0.0
        } else {
            self.ood_bias.unwrap_or(1.0 / self.class_count as f64)
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    IdTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::IdTest, Split::OodTest];

    pub(crate) fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::IdTest => 1,
            Split::OodTest => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Split::Train),
            1 => Ok(Split::IdTest),
            2 => Ok(Split::OodTest),
            t => Err(Error::Format(format!("unknown split tag {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Embedding,
    pub label: OneHot,
    /// Zero-shot soft label, filled in by the oracle before training.
    pub y_zs: Option<ProbVector>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: BiasSpec,
    /// Present once zero-shot labels have been cached.
    pub oracle: Option<OracleSpec>,
    pub train: Vec<Sample>,
    pub id_test: Vec<Sample>,
    pub ood_test: Vec<Sample>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::IdTest => &self.id_test,
            Split::OodTest => &self.ood_test,
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.id_test).chain(&self.ood_test)
    }

    pub fn samples_mut(&mut self) -> impl Iterator<Item = &mut Sample> {
        self.train
            .iter_mut()
            .chain(self.id_test.iter_mut())
            .chain(self.ood_test.iter_mut())
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.id_test.len() + self.ood_test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn has_zero_shot_cache(&self) -> bool {
        !self.is_empty() && self.samples().all(|s| s.y_zs.is_some())
    }
}

/// Planted per-class directions, each unit-norm within its own block.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedDirections {
    pub semantic: Vec<Vec<f64>>,
    pub context: Vec<Vec<f64>>,
}

/// Draws the planted directions for `spec`. Depends only on the spec.
pub fn planted_directions(spec: &BiasSpec) -> Result<PlantedDirections> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, Stream::Directions);
    let semantic = random_frame(&mut rng, spec.class_count, spec.semantic_dim);
    let context = random_frame(&mut rng, spec.class_count, spec.context_dim);
    Ok(PlantedDirections { semantic, context })
}

// `count` unit vectors in `dim` dimensions, mutually orthogonal when
// `count <= dim` (Gram-Schmidt on Gaussian draws).
fn random_frame(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut frame: Vec<Vec<f64>> = Vec::with_capacity(count);
    while frame.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if frame.len() < dim {
            for u in &frame {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= d * ui;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        v.iter_mut().for_each(|a| *a /= norm);
        frame.push(v);
    }
    frame
}

/// Generates train, ID-test and OOD-test splits. Sample `i` of every split has
/// class `i mod class_count`, so classes are balanced to within one sample.
pub fn generate(spec: &BiasSpec) -> Result<Dataset> {
    let dirs = planted_directions(spec)?;
    let ood_bias = spec.effective_ood_bias();
    let draw_split = |split: Split, size: usize, agree: f64, stream: Stream| {
        let mut rng = rng_for(spec.seed, stream);
        (0..size)
            .map(|i| draw_sample(spec, &dirs, &mut rng, i % spec.class_count, agree, split))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Dataset {
        spec: spec.clone(),
        oracle: None,
        train: draw_split(Split::Train, spec.train_size, spec.bias_strength, Stream::Train)?,
        id_test: draw_split(Split::IdTest, spec.id_test_size, spec.bias_strength, Stream::IdTest)?,
        ood_test: draw_split(Split::OodTest, spec.ood_test_size, ood_bias, Stream::OodTest)?,
    })
}

fn draw_sample(
    spec: &BiasSpec,
    dirs: &PlantedDirections,
    rng: &mut ChaCha8Rng,
    class: usize,
    agree: f64,
    split: Split,
) -> Result<Sample> {
    let mut x = Vec::with_capacity(spec.feature_dim());
    for &s in &dirs.semantic[class] {
        let n: f64 = rng.sample(StandardNormal);
        x.push(s + spec.noise_std * n);
    }
    let context = context_class(rng, class, spec.class_count, agree);
    x.extend_from_slice(&dirs.context[context]);
    Ok(Sample {
        x: Embedding::normalized(x)?,
        label: OneHot::new(class, spec.class_count)?,
        y_zs: None,
        split,
    })
}

fn context_class(rng: &mut ChaCha8Rng, class: usize, k: usize, agree: f64) -> usize {
    // Always consume both draws so the stream layout does not depend on agree.
    let u: f64 = rng.random();
    let other = rng.random_range(0..k - 1);
    if u < agree {
        class
    } else if other >= class {
        other + 1
    } else {
        other
    }
}

/// Class whose planted context direction is closest to the sample's context
/// block.
pub fn context_of(sample: &Sample, spec: &BiasSpec, dirs: &PlantedDirections) -> usize {
    let ctx = &sample.x.values()[spec.semantic_dim..];
    let scores: Vec<f64> = dirs
        .context
        .iter()
        .map(|c| c.iter().zip(ctx).map(|(a, b)| a * b).sum())
        .collect();
    crate::prob::argmax(&scores)
}
