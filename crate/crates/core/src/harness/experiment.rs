//! One configuration, many seeds: generate data, build the oracle, cache
//! zero-shot labels, train, evaluate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, harmonic_mean, Ensemble, Predictor};
use super::report;
use crate::datagen::{format, generate, BiasSpec, Dataset};
use crate::error::{Error, Result};
use crate::losses::LossMode;
use crate::model::checkpoint::{config_hash, Checkpoint};
use crate::model::train::{train, TrainConfig};
use crate::model::{init_ft, init_ft_plus, LinearModel};
use crate::oracle::{build_oracle, OracleSpec, ZeroShotOracle};

/// Version of the experiment config JSON schema.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Overrides the directory of every output path.
pub const OUTPUT_DIR_ENV: &str = "PROREG_OUTPUT_DIR";
/// Number of worker threads for independent runs.
pub const THREADS_ENV: &str = "PROREG_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    /// The oracle itself; nothing is trained.
    ZeroShot,
    Ft,
    FtPlus,
    Kd { lambda: f64 },
    #[serde(rename = "proreg")]
    ProReg { alpha: f64 },
    /// FT model mixed with the zero-shot prediction at inference time.
    Ensemble { lambda: f64 },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::ZeroShot => "zero_shot",
            Method::Ft => "ft",
            Method::FtPlus => "ft_plus",
            Method::Kd { .. } => "kd",
            Method::ProReg { .. } => "proreg",
            Method::Ensemble { .. } => "ensemble",
        }
    }

    /// The method's scalar hyperparameter, if any.
    pub fn param(&self) -> Option<(&'static str, f64)> {
        match *self {
            Method::Kd { lambda } | Method::Ensemble { lambda } => Some(("lambda", lambda)),
            Method::ProReg { alpha } => Some(("alpha", alpha)),
            _ => None,
        }
    }

    /// `"lambda=0.5"`, `"alpha=2"`, or empty.
    pub fn params_label(&self) -> String {
        self.param().map(|(k, v)| format!("{k}={v}")).unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::Ensemble { lambda } if !(0.0..=1.0).contains(&lambda) => Err(Error::InvalidParameter(
                format!("ensemble lambda must lie in [0, 1], got {lambda}"),
            )),
            _ => self.loss_mode().map_or(Ok(()), |m| m.validate()),
        }
    }

    /// Objective used to train the head; `None` when nothing is trained.
    pub fn loss_mode(&self) -> Option<LossMode> {
        match *self {
            Method::ZeroShot => None,
            Method::Ft | Method::FtPlus | Method::Ensemble { .. } => Some(LossMode::Ft),
            Method::Kd { lambda } => Some(LossMode::Kd { lambda }),
            Method::ProReg { alpha } => Some(LossMode::ProReg { alpha }),
        }
    }

    /// Random for FT and the ensemble's FT member; prompt-initialized for
    /// FT++, KD and ProReg.
    pub fn default_init(&self) -> Option<HeadInit> {
        match self {
            Method::ZeroShot => None,
            Method::Ft | Method::Ensemble { .. } => Some(HeadInit::Random),
            Method::FtPlus | Method::Kd { .. } | Method::ProReg { .. } => Some(HeadInit::Prompt),
        }
    }

    // Sort key for canonical row order.
    pub(crate) fn sort_key(&self) -> (&'static str, f64) {
        (self.name(), self.param().map_or(f64::NEG_INFINITY, |(_, v)| v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInit {
    /// Uniform in `[-1/sqrt(d), 1/sqrt(d)]`, bias zero.
    Random,
    /// Rows copied from the oracle's class embeddings.
    Prompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Generator spec; its seed is replaced by each run seed.
    #[serde(default)]
    pub data: BiasSpec,
    /// Pre-generated dataset file. When set, `data` is ignored and the same
    /// data is used for every seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    /// Oracle spec; its seed is replaced by each run seed and an unset
    /// temperature resolves to `train.temperature`.
    #[serde(default)]
    pub oracle: OracleSpec,
    pub method: Method,
    /// Overrides the method's default head initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_init: Option<HeadInit>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// CSV destination. Checkpoints of trained heads are written next to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Fill the `wall_time_ms` column. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    pub fn new(method: Method) -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            data: BiasSpec::default(),
            dataset: None,
            oracle: OracleSpec::default(),
            method,
            head_init: None,
            train: TrainConfig::default(),
            seeds: default_seeds(),
            output: None,
            record_wall_time: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self { method, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidInput("at least one seed is required".into()));
        }
        self.method.validate()?;
        self.train.validate()?;
        if self.dataset.is_none() {
            self.data.validate()?;
        }
        Ok(())
    }

    /// Init scheme actually used.
    pub fn head_init(&self) -> Option<HeadInit> {
        match self.method {
            Method::ZeroShot => None,
            _ => self.head_init.or(self.method.default_init()),
        }
    }

    /// Oracle spec for one seed, with the temperature resolved.
    pub fn oracle_for(&self, seed: u64) -> OracleSpec {
        OracleSpec {
            temperature: Some(self.oracle.temperature_or(self.train.temperature)),
            ..self.oracle.with_seed(seed)
        }
    }

    /// Output path after applying the output-directory override.
    pub fn resolved_output(&self) -> Option<PathBuf> {
        self.output.as_ref().map(|p| resolve_output(p))
    }
}

/// Applies the output-directory override from the environment to `path`.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => {
            let name = path.file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("results.csv"));
            PathBuf::from(dir).join(name)
        }
        _ => path.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub method: Method,
    pub seed: u64,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub harmonic_mean: f64,
    pub wall_time_ms: Option<f64>,
}

impl MetricsRow {
    pub fn new(method: Method, seed: u64, id_accuracy: f64, ood_accuracy: f64) -> Result<Self> {
        Ok(Self {
            method,
            seed,
            id_accuracy,
            ood_accuracy,
            harmonic_mean: harmonic_mean(id_accuracy, ood_accuracy)?,
            wall_time_ms: None,
        })
    }
}

/// Sorts by method name, parameter value, then seed.
pub fn sort_canonical(rows: &mut [MetricsRow]) {
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.method.sort_key(), b.method.sort_key());
        ka.0.cmp(kb.0).then(ka.1.total_cmp(&kb.1)).then(a.seed.cmp(&b.seed))
    });
}

/// Everything one seed of one config produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: MetricsRow,
    /// The trained head, absent for zero-shot.
    pub model: Option<LinearModel>,
    pub dataset: Dataset,
    pub oracle: ZeroShotOracle,
}

/// Dataset with cached zero-shot labels and the oracle that produced them.
pub fn prepare_data(config: &ExperimentConfig, seed: u64) -> Result<(Dataset, ZeroShotOracle)> {
    let mut dataset = match &config.dataset {
        Some(path) => format::load(path),
        None => generate(&config.data.with_seed(seed)),
    }
    .map_err(|e| e.at_stage("data"))?;
    let ospec = config.oracle_for(seed);
    let oracle = build_oracle(&dataset.spec, &ospec)
        .and_then(|o| o.cache_zero_shot_labels(&mut dataset, &ospec).map(|_| o))
        .map_err(|e| e.at_stage("oracle"))?;
    Ok((dataset, oracle))
}

/// Initial head for `config.method`, or `None` for zero-shot.
pub fn initial_model(config: &ExperimentConfig, oracle: &ZeroShotOracle, seed: u64) -> Result<Option<LinearModel>> {
    let (d, k, t) = (oracle.feature_dim(), oracle.class_count(), config.train.temperature);
    config
        .head_init()
        .map(|init| match init {
            HeadInit::Random => init_ft(d, k, seed, t),
            HeadInit::Prompt => init_ft_plus(oracle.class_embeddings(), k, t),
        })
        .transpose()
        .map_err(|e| e.at_stage("init"))
}

/// Runs a single seed of `config`. Does not write anything.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunOutcome> {
    let started = Instant::now();
    let (dataset, oracle) = prepare_data(config, seed)?;
    let mut model = initial_model(config, &oracle, seed)?;
    if let (Some(m), Some(mode)) = (model.as_mut(), config.method.loss_mode()) {
        let tc = TrainConfig { seed, ..config.train.clone() };
        train(m, &dataset.train, &mode, &tc).map_err(|e| e.at_stage("train"))?;
    }

    let (id, ood) = (|| -> Result<(f64, f64)> {
        let eval = |p: &dyn Predictor| -> Result<(f64, f64)> {
            Ok((evaluate(p, &dataset.id_test)?, evaluate(p, &dataset.ood_test)?))
        };
        match (config.method, model.as_ref()) {
            (Method::ZeroShot, _) => eval(&oracle),
            (Method::Ensemble { lambda }, Some(m)) => eval(&Ensemble { model: m, lambda }),
            (_, Some(m)) => eval(m),
            (_, None) => Err(Error::InvalidInput("no model to evaluate".into())),
        }
    })()
    .map_err(|e| e.at_stage("evaluate"))?;

    let mut row = MetricsRow::new(config.method, seed, id, ood).map_err(|e| e.at_stage("evaluate"))?;
    if config.record_wall_time {
        row.wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
    }
    Ok(RunOutcome { row, model, dataset, oracle })
}

/// File name of the checkpoint for one run next to `output`.
pub fn checkpoint_path(output: &Path, method: &Method, seed: u64) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    let params = method.params_label();
    let name = if params.is_empty() {
        format!("{stem}-{}-seed{seed}.ckpt", method.name())
    } else {
        format!("{stem}-{}-{params}-seed{seed}.ckpt", method.name())
    };
    output.with_file_name(name)
}

fn save_checkpoint(config: &ExperimentConfig, seed: u64, model: &LinearModel, output: &Path) -> Result<()> {
    let seeded = ExperimentConfig { seeds: vec![seed], ..config.clone() };
    let ck = Checkpoint { model: model.clone(), config_hash: config_hash(&seeded)? };
    let path = checkpoint_path(output, &config.method, seed);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ck.save(path)
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every (config, seed) pair as an independent job. Successful rows come
/// back in canonical order; the first failure in job order, if any, is
/// returned alongside. Checkpoints are written when a config has an output.
pub fn run_jobs(configs: &[ExperimentConfig]) -> (Vec<MetricsRow>, Option<Error>) {
    let jobs: Vec<(&ExperimentConfig, u64)> =
        configs.iter().flat_map(|c| c.seeds.iter().map(move |&s| (c, s))).collect();
    let run = |&(config, seed): &(&ExperimentConfig, u64)| -> Result<MetricsRow> {
        let out = run_seed(config, seed)?;
        if let (Some(path), Some(model)) = (config.resolved_output(), out.model.as_ref()) {
            save_checkpoint(config, seed, model, &path).map_err(|e| e.at_stage("checkpoint"))?;
        }
        Ok(out.row)
    };
    let results: Vec<Result<MetricsRow>> = match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(|| jobs.par_iter().map(run).collect()),
        Err(_) => jobs.iter().map(run).collect(),
    };
    let mut rows = Vec::with_capacity(results.len());
    let mut first_error = None;
    for r in results {
        match r {
            Ok(row) => rows.push(row),
            Err(e) if first_error.is_none() => first_error = Some(e),
            Err(_) => {}
        }
    }
    sort_canonical(&mut rows);
    (rows, first_error)
}

/// Runs every seed of `config`. When `config.output` is set, the CSV (with
/// mean/std rows) and checkpoints are written; on failure the rows finished
/// so far are flushed with a truncation marker and the error is returned.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    config.validate()?;
    let (rows, error) = run_jobs(std::slice::from_ref(config));
    finish(rows, error, config.resolved_output().as_deref())
}

pub(crate) fn finish(rows: Vec<MetricsRow>, error: Option<Error>, output: Option<&Path>) -> Result<Vec<MetricsRow>> {
    if let Some(path) = output {
        let marker = error.as_ref().map(|e| e.to_string());
        report::write_csv_file(path, &rows, marker.as_deref()).map_err(|e| e.at_stage("report"))?;
    }
    match error {
        Some(e) => Err(e),
        None => Ok(rows),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::OracleQuality;

    fn small(method: Method) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(method);
        c.data = BiasSpec { train_size: 200, id_test_size: 100, ood_test_size: 100, ..BiasSpec::default() };
        c.train.epochs = 2;
        c
    }

    #[test]
    fn method_json_shape() {
        let m: Method = serde_json::from_str(r#"{"kind":"proreg","alpha":2.0}"#).unwrap();
        assert_eq!(m, Method::ProReg { alpha: 2.0 });
        assert_eq!(m.params_label(), "alpha=2");
        let m: Method = serde_json::from_str(r#"{"kind":"zero_shot"}"#).unwrap();
        assert_eq!(m.name(), "zero_shot");
        assert!(serde_json::from_str::<Method>(r#"{"kind":"kd"}"#).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = ExperimentConfig::from_json(r#"{"schema_version":1,"method":{"kind":"ft"}}"#).unwrap();
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.data, BiasSpec::default());
        assert_eq!(c.train, TrainConfig::default());
        assert!(ExperimentConfig::from_json(r#"{"schema_version":2,"method":{"kind":"ft"}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version":1,"method":{"kind":"ft"},"seeds":[]}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version":1,"method":{"kind":"kd","lambda":1.5}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version":1,"method":{"kind":"ensemble","lambda":-0.1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version":1,"method":{"kind":"ft"},"typo":1}"#).is_err());
    }

    #[test]
    fn oracle_temperature_follows_training() {
        let mut c = small(Method::ZeroShot);
        c.train.temperature = 0.05;
        assert_eq!(c.oracle_for(3).temperature, Some(0.05));
        assert_eq!(c.oracle_for(3).seed, 3);
        c.oracle.temperature = Some(0.2);
        assert_eq!(c.oracle_for(3).temperature, Some(0.2));
    }

    #[test]
    fn clean_oracle_on_noiseless_data_is_perfect() {
        let mut c = small(Method::ZeroShot);
        c.data.noise_std = 0.0;
        c.oracle.quality = OracleQuality::Clean;
        let row = run_seed(&c, 4).unwrap().row;
        assert_eq!((row.id_accuracy, row.ood_accuracy, row.harmonic_mean), (1.0, 1.0, 1.0));
    }

    #[test]
    fn ft_plus_before_training_equals_zero_shot() {
        for seed in 0..3 {
            let zs = run_seed(&small(Method::ZeroShot), seed).unwrap().row;
            let mut c = small(Method::FtPlus);
            c.train.epochs = 0;
            let ftp = run_seed(&c, seed).unwrap().row;
            assert_eq!((ftp.id_accuracy, ftp.ood_accuracy), (zs.id_accuracy, zs.ood_accuracy));
        }
    }

    #[test]
    fn stage_tagged_failure() {
        let mut c = small(Method::Ft);
        c.dataset = Some(PathBuf::from("/nonexistent/data.prds"));
        let err = run_seed(&c, 0).unwrap_err();
        assert!(matches!(err, Error::Stage { stage: "data", .. }), "{err}");
    }

    #[test]
    fn canonical_order() {
        let mk = |m, s| MetricsRow::new(m, s, 0.5, 0.5).unwrap();
        let mut rows = vec![
            mk(Method::ProReg { alpha: 8.0 }, 0),
            mk(Method::Ft, 1),
            mk(Method::ProReg { alpha: 0.5 }, 1),
            mk(Method::ProReg { alpha: 0.5 }, 0),
            mk(Method::Ft, 0),
        ];
        sort_canonical(&mut rows);
        let keys: Vec<_> = rows.iter().map(|r| (r.method.params_label(), r.seed)).collect();
        assert_eq!(
            keys,
            vec![
                ("".into(), 0),
                ("".into(), 1),
                ("alpha=0.5".into(), 0),
                ("alpha=0.5".into(), 1),
                ("alpha=8".into(), 0)
            ]
        );
    }

    #[test]
    fn checkpoint_names() {
        let p = checkpoint_path(Path::new("/tmp/out/res.csv"), &Method::Kd { lambda: 0.25 }, 3);
        assert_eq!(p, PathBuf::from("/tmp/out/res-kd-lambda=0.25-seed3.ckpt"));
        let p = checkpoint_path(Path::new("res.csv"), &Method::Ft, 0);
        assert_eq!(p, PathBuf::from("res-ft-seed0.ckpt"));
    }
}
