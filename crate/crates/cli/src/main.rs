use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use proreg::datagen::{format, generate, BiasSpec};
use proreg::harness::experiment::{resolve_output, CONFIG_SCHEMA_VERSION};
use proreg::harness::sweep::{sweep, SweepParam};
use proreg::harness::{evaluate, harmonic_mean, run_experiment, write_csv, Ensemble, ExperimentConfig, MetricsRow};
use proreg::model::checkpoint::Checkpoint;
use proreg::oracle::{build_oracle, OracleSpec};
use proreg::prob::DEFAULT_TEMPERATURE;
use proreg::q2s::{Converter, Q2sConfig, Q2sError};

#[derive(Parser)]
#[command(name = "proreg", version, about = "Prompt-regularized fine-tuning on synthetic contextual-bias tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file from a data spec.
    GenerateData {
        spec: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Write JSON lines instead of the binary format.
        #[arg(long)]
        jsonl: bool,
    },
    /// Run an experiment config and emit its metrics CSV.
    Train { config: PathBuf },
    /// Evaluate a checkpoint on a dataset file.
    Evaluate {
        checkpoint: PathBuf,
        dataset: PathBuf,
        /// Mix the checkpoint with the dataset's cached zero-shot labels.
        #[arg(long)]
        ensemble_lambda: Option<f64>,
    },
    /// Run a config template over a grid of one hyperparameter.
    Sweep {
        template: PathBuf,
        /// alpha, kd_lambda or ensemble_lambda
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.5,1,2,4,8
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        grid: Vec<f64>,
    },
    /// Rewrite questions (one per line) into prompt statements as JSON lines.
    Q2s {
        /// Input file; standard input when omitted.
        input: Option<PathBuf>,
        /// Exit with a failure status if any question is unsupported.
        #[arg(long)]
        strict: bool,
        #[arg(long, default_value = "[MASK]")]
        mask_token: String,
    },
}

/// `generate-data` input.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSpecFile {
    schema_version: u32,
    #[serde(default)]
    data: BiasSpec,
    /// When present, zero-shot labels are cached into the file.
    #[serde(default)]
    oracle: Option<OracleSpec>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

// Core errors already embed their source in the message, so skip links the
// previous one repeats.
fn describe(e: &anyhow::Error) -> String {
    let mut parts: Vec<String> = Vec::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !parts.last().is_some_and(|p| p.contains(&msg)) {
            parts.push(msg);
        }
    }
    parts.join(": ")
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenerateData { spec, output, jsonl } => generate_data(&spec, &output, jsonl)?,
        Command::Train { config } => {
            let config = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let rows = run_experiment(&config)?;
            emit(&rows, config.resolved_output().as_deref())?;
        }
        Command::Evaluate { checkpoint, dataset, ensemble_lambda } => {
            evaluate_checkpoint(&checkpoint, &dataset, ensemble_lambda)?
        }
        Command::Sweep { template, param, grid } => {
            let param: SweepParam = param.parse()?;
            let config = ExperimentConfig::load(&template).with_context(|| format!("loading {}", template.display()))?;
            let rows = sweep(&config, param, &grid)?;
            emit(&rows, config.resolved_output().as_deref())?;
        }
        Command::Q2s { input, strict, mask_token } => return q2s(input.as_deref(), strict, mask_token),
    }
    Ok(ExitCode::SUCCESS)
}

fn generate_data(spec_path: &Path, output: &Path, jsonl: bool) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).with_context(|| format!("reading {}", spec_path.display()))?;
    let spec: DataSpecFile = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec_path.display()))?;
    if spec.schema_version != CONFIG_SCHEMA_VERSION {
        bail!("unsupported schema_version {} (expected {CONFIG_SCHEMA_VERSION})", spec.schema_version);
    }
    let mut dataset = generate(&spec.data)?;
    if let Some(o) = spec.oracle {
        let o = OracleSpec { temperature: Some(o.temperature_or(DEFAULT_TEMPERATURE)), ..o };
        build_oracle(&dataset.spec, &o)?.cache_zero_shot_labels(&mut dataset, &o)?;
    }
    let output = resolve_output(output);
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    if jsonl {
        let file = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
        format::write_jsonl(&dataset, file)?;
    } else {
        format::save(&dataset, &output)?;
    }
    eprintln!("wrote {} samples to {}", dataset.len(), output.display());
    Ok(())
}

fn emit(rows: &[MetricsRow], output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => eprintln!("wrote {} rows to {}", rows.len(), path.display()),
        None => write_csv(io::stdout().lock(), rows, None)?,
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    id_accuracy: f64,
    ood_accuracy: f64,
    harmonic_mean: f64,
}

fn evaluate_checkpoint(checkpoint: &Path, dataset: &Path, ensemble_lambda: Option<f64>) -> Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let data = format::load(dataset).with_context(|| format!("loading {}", dataset.display()))?;
    if ck.model.feature_dim() != data.spec.feature_dim() || ck.model.class_count() != data.spec.class_count {
        bail!(
            "checkpoint is {}x{} but the dataset has {} classes over {} features",
            ck.model.class_count(),
            ck.model.feature_dim(),
            data.spec.class_count,
            data.spec.feature_dim()
        );
    }
    let (id, ood) = match ensemble_lambda {
        None => (evaluate(&ck.model, &data.id_test)?, evaluate(&ck.model, &data.ood_test)?),
        Some(lambda) => {
            let e = Ensemble { model: &ck.model, lambda };
            (evaluate(&e, &data.id_test)?, evaluate(&e, &data.ood_test)?)
        }
    };
    let report = EvalReport { id_accuracy: id, ood_accuracy: ood, harmonic_mean: harmonic_mean(id, ood)? };
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

#[derive(Serialize)]
struct Q2sRecord<'a> {
    question: &'a str,
    #[serde(rename = "type")]
    kind: &'a str,
    statement: Option<String>,
    route: Option<proreg::q2s::Route>,
    mask_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn q2s(input: Option<&Path>, strict: bool, mask_token: String) -> Result<ExitCode> {
    let reader: Box<dyn BufRead> = match input {
        Some(p) => Box::new(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?)),
        None => Box::new(BufReader::new(io::stdin())),
    };
    let conv = Converter::new(Q2sConfig { mask_token, ..Q2sConfig::default() });
    let mut out = io::BufWriter::new(io::stdout().lock());
    let mut unsupported = 0usize;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match conv.convert(&line) {
            Ok((_, kind, s)) => Q2sRecord {
                question: &line,
                kind: match kind {
                    proreg::q2s::QuestionType::OpenEnded => "open_ended",
                    proreg::q2s::QuestionType::ClosedEnded => "closed_ended",
                },
                statement: Some(s.text),
                route: Some(s.route),
                mask_index: s.mask_index,
                error: None,
            },
            Err(e @ (Q2sError::UnsupportedQuestion(_) | Q2sError::EmptyQuestion)) => {
                unsupported += 1;
                Q2sRecord {
                    question: &line,
                    kind: "unsupported",
                    statement: None,
                    route: None,
                    mask_index: None,
                    error: Some(e.to_string()),
                }
            }
            Err(e) => return Err(e.into()),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    if strict && unsupported > 0 {
        eprintln!("{unsupported} unsupported question(s)");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
