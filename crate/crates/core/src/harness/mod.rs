//! Experiment orchestration: per-seed pipelines for every method, ID / OOD /
//! harmonic-mean metrics, hyperparameter sweeps and CSV reporting.
//!
//! Independent runs (seeds, grid points) execute on a rayon pool sized by
//! `PROREG_THREADS`; rows are merged and sorted before anything is written,
//! so the thread count never changes the output.

pub mod experiment;
pub mod metrics;
pub mod report;
pub mod sweep;

pub use experiment::{run_experiment, run_seed, ExperimentConfig, HeadInit, Method, MetricsRow};
pub use metrics::{ensemble_predict, evaluate, harmonic_mean, Ensemble, Predictor};
pub use report::{write_csv, CSV_HEADER, CSV_SCHEMA_VERSION};
pub use sweep::{compare, sweep, Comparison, SweepParam};
