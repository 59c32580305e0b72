//! CSV output.
//!
//! Schema version 1, columns in this order:
//!
//! ```text
//! schema_version,method,params,seed,id_accuracy,ood_accuracy,harmonic_mean,wall_time_ms
//! ```
//!
//! Per-seed rows come first in canonical order (method, parameter, seed).
//! Each method/parameter group is then summarized by a `mean` and a `std`
//! row (sample standard deviation over seeds) carrying the label in the
//! `seed` column; their `harmonic_mean` is the mean/std of the per-seed
//! harmonic means. Numbers use the shortest representation that round-trips.
//! `wall_time_ms` is empty unless wall time recording was requested.
//!
//! A run that fails part-way still writes its finished rows, followed by one
//! line `# truncated: <diagnostic>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::experiment::{sort_canonical, Method, MetricsRow};
use super::metrics::mean_std;
use crate::error::{Error, Result};

pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 8] = [
    "schema_version",
    "method",
    "params",
    "seed",
    "id_accuracy",
    "ood_accuracy",
    "harmonic_mean",
    "wall_time_ms",
];

pub const TRUNCATION_MARKER: &str = "# truncated:";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stat {
    Mean,
    Std,
}

impl Stat {
    pub fn label(self) -> &'static str {
        match self {
            Stat::Mean => "mean",
            Stat::Std => "std",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: Method,
    pub stat: Stat,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub harmonic_mean: f64,
    pub wall_time_ms: Option<f64>,
}

/// Mean and std rows for each method/parameter group, in canonical order.
pub fn aggregate(rows: &[MetricsRow]) -> Vec<AggregateRow> {
    let mut sorted = rows.to_vec();
    sort_canonical(&mut sorted);
    let mut out = Vec::new();
    for group in sorted.chunk_by(|a, b| a.method == b.method) {
        let col = |f: fn(&MetricsRow) -> f64| mean_std(&group.iter().map(f).collect::<Vec<_>>());
        let (id, ood, hm) = (col(|r| r.id_accuracy), col(|r| r.ood_accuracy), col(|r| r.harmonic_mean));
        let wall: Option<Vec<f64>> = group.iter().map(|r| r.wall_time_ms).collect();
        let wall = wall.map(|w| mean_std(&w));
        for (stat, pick) in [(Stat::Mean, 0), (Stat::Std, 1)] {
            let get = |p: (f64, f64)| if pick == 0 { p.0 } else { p.1 };
            out.push(AggregateRow {
                method: group[0].method,
                stat,
                id_accuracy: get(id),
                ood_accuracy: get(ood),
                harmonic_mean: get(hm),
                wall_time_ms: wall.map(get),
            });
        }
    }
    out
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Writes per-seed rows, aggregate rows and an optional truncation marker.
pub fn write_csv<W: Write>(out: W, rows: &[MetricsRow], truncated: Option<&str>) -> Result<()> {
    let mut sorted = rows.to_vec();
    sort_canonical(&mut sorted);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    let version = CSV_SCHEMA_VERSION.to_string();
    for r in &sorted {
        w.write_record([
            version.as_str(),
            r.method.name(),
            &r.method.params_label(),
            &r.seed.to_string(),
            &num(r.id_accuracy),
            &num(r.ood_accuracy),
            &num(r.harmonic_mean),
            &r.wall_time_ms.map(num).unwrap_or_default(),
        ])?;
    }
    for a in aggregate(&sorted) {
        w.write_record([
            version.as_str(),
            a.method.name(),
            &a.method.params_label(),
            a.stat.label(),
            &num(a.id_accuracy),
            &num(a.ood_accuracy),
            &num(a.harmonic_mean),
            &a.wall_time_ms.map(num).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    let mut inner = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    if let Some(msg) = truncated {
        let one_line = msg.replace(['\r', '\n'], " ");
        writeln!(inner, "{TRUNCATION_MARKER} {one_line}").map_err(|e| Error::Csv(e.into()))?;
    }
    inner.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn to_csv_string(rows: &[MetricsRow], truncated: Option<&str>) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows, truncated)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Writes the CSV to `path`, creating parent directories.
pub fn write_csv_file(path: &Path, rows: &[MetricsRow], truncated: Option<&str>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = to_csv_string(rows, truncated)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
