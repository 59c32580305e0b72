//! Prompt-regularized fine-tuning on synthetic contextual-bias tasks.
//!
//! The crate covers the whole pipeline: probability primitives ([`prob`]),
//! the fine-tuning objectives and their logit gradients ([`losses`]), a
//! linear head with optimizers and checkpoints ([`model`]), a synthetic
//! biased-data generator ([`datagen`]), a context-blind zero-shot predictor
//! ([`oracle`]), a question-to-statement rewriter ([`q2s`]) and experiment
//! orchestration with CSV reporting ([`harness`]).

mod codec;
pub mod datagen;
pub mod harness;
pub mod error;
pub mod losses;
pub mod model;
pub mod oracle;
pub mod prob;
pub mod q2s;

pub use error::{Error, Result};
pub use losses::LossMode;
pub use prob::{Embedding, LogitVector, OneHot, ProbVector};
