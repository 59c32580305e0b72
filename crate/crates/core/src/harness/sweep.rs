//! Grid sweeps over one method hyperparameter, and the method comparison
//! table built on top of them.

use std::str::FromStr;

use serde::Serialize;

use super::experiment::{finish, run_jobs, ExperimentConfig, Method, MetricsRow};
use super::metrics::mean_std;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// ProReg's global strength.
    Alpha,
    /// KD's constant trade-off weight.
    KdLambda,
    /// Inference-time mixing weight of the ensemble.
    EnsembleLambda,
}

impl SweepParam {
    pub fn method(self, value: f64) -> Method {
        match self {
            SweepParam::Alpha => Method::ProReg { alpha: value },
            SweepParam::KdLambda => Method::Kd { lambda: value },
            SweepParam::EnsembleLambda => Method::Ensemble { lambda: value },
        }
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "kd_lambda" => Ok(SweepParam::KdLambda),
            "ensemble_lambda" => Ok(SweepParam::EnsembleLambda),
            other => Err(Error::InvalidInput(format!(
                "unknown sweep parameter {other:?} (expected alpha, kd_lambda or ensemble_lambda)"
            ))),
        }
    }
}

/// One config per grid point, each inheriting everything else from
/// `template`.
pub fn sweep_configs(template: &ExperimentConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<ExperimentConfig>> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|&v| {
            let c = template.with_method(param.method(v));
            c.validate()?;
            Ok(c)
        })
        .collect()
}

/// Runs every grid point for every template seed. Writes one CSV to the
/// template's output, if any.
pub fn sweep(template: &ExperimentConfig, param: SweepParam, grid: &[f64]) -> Result<Vec<MetricsRow>> {
    let configs = sweep_configs(template, param, grid)?;
    let (rows, error) = run_jobs(&configs);
    finish(rows, error, template.resolved_output().as_deref())
}

/// Mean and sample std over seeds for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub id_accuracy: (f64, f64),
    pub ood_accuracy: (f64, f64),
    pub harmonic_mean: (f64, f64),
    pub per_seed_hm: Vec<f64>,
}

/// Summary of the rows belonging to `method`, or `None` if there are none.
pub fn summarize(rows: &[MetricsRow], method: &Method) -> Option<MethodSummary> {
    let mine: Vec<&MetricsRow> = rows.iter().filter(|r| r.method == *method).collect();
    if mine.is_empty() {
        return None;
    }
    let col = |f: fn(&MetricsRow) -> f64| mine.iter().map(|r| f(r)).collect::<Vec<f64>>();
    let hm = col(|r| r.harmonic_mean);
    Some(MethodSummary {
        method: *method,
        id_accuracy: mean_std(&col(|r| r.id_accuracy)),
        ood_accuracy: mean_std(&col(|r| r.ood_accuracy)),
        harmonic_mean: mean_std(&hm),
        per_seed_hm: hm,
    })
}

/// Grid point with the highest mean harmonic mean; ties go to the earlier
/// grid value.
pub fn best_of(rows: &[MetricsRow], param: SweepParam, grid: &[f64]) -> Option<MethodSummary> {
    let mut best: Option<MethodSummary> = None;
    for &v in grid {
        if let Some(s) = summarize(rows, &param.method(v)) {
            if best.as_ref().is_none_or(|b| s.harmonic_mean.0 > b.harmonic_mean.0) {
                best = Some(s);
            }
        }
    }
    best
}

/// ProReg at one `alpha` next to every baseline, with KD and the ensemble at
/// their grid-optimal lambda.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub proreg: MethodSummary,
    pub zero_shot: MethodSummary,
    pub ft: MethodSummary,
    pub ft_plus: MethodSummary,
    pub best_kd: MethodSummary,
    pub best_ensemble: MethodSummary,
}

impl Comparison {
    pub fn baselines(&self) -> [&MethodSummary; 5] {
        [&self.zero_shot, &self.ft, &self.ft_plus, &self.best_kd, &self.best_ensemble]
    }

    /// Rows of `method  params  id  ood  hm` as mean±std, plus ProReg's HM
    /// gap to each baseline.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let pm = |p: (f64, f64)| format!("{:.4}±{:.4}", p.0, p.1);
        for s in std::iter::once(&self.proreg).chain(self.baselines()) {
            out.push_str(&format!(
                "{:<10} {:<12} id {}  ood {}  hm {}\n",
                s.method.name(),
                s.method.params_label(),
                pm(s.id_accuracy),
                pm(s.ood_accuracy),
                pm(s.harmonic_mean)
            ));
        }
        for b in self.baselines() {
            let gaps: Vec<f64> = self.proreg.per_seed_hm.iter().zip(&b.per_seed_hm).map(|(p, q)| p - q).collect();
            let (m, s) = mean_std(&gaps);
            out.push_str(&format!(
                "hm(proreg) - hm({} {}) = {m:+.4}±{s:.4}\n",
                b.method.name(),
                b.method.params_label()
            ));
        }
        out
    }
}

/// Runs ProReg(`alpha`), zero-shot, FT, FT++ and the KD and ensemble grids on
/// the template's data and seeds. Returns the comparison and every row.
pub fn compare(
    template: &ExperimentConfig,
    alpha: f64,
    kd_grid: &[f64],
    ensemble_grid: &[f64],
) -> Result<(Comparison, Vec<MetricsRow>)> {
    let mut configs = vec![
        template.with_method(Method::ProReg { alpha }),
        template.with_method(Method::ZeroShot),
        template.with_method(Method::Ft),
        template.with_method(Method::FtPlus),
    ];
    configs.extend(sweep_configs(template, SweepParam::KdLambda, kd_grid)?);
    configs.extend(sweep_configs(template, SweepParam::EnsembleLambda, ensemble_grid)?);
    for c in &configs {
        c.validate()?;
    }
    let (rows, error) = run_jobs(&configs);
    if let Some(e) = error {
        return Err(e);
    }
    let get = |m: Method| summarize(&rows, &m).ok_or_else(|| Error::InvalidInput(format!("no rows for {}", m.name())));
    let comparison = Comparison {
        proreg: get(Method::ProReg { alpha })?,
        zero_shot: get(Method::ZeroShot)?,
        ft: get(Method::Ft)?,
        ft_plus: get(Method::FtPlus)?,
        best_kd: best_of(&rows, SweepParam::KdLambda, kd_grid).ok_or_else(|| Error::InvalidInput("no kd rows".into()))?,
        best_ensemble: best_of(&rows, SweepParam::EnsembleLambda, ensemble_grid)
            .ok_or_else(|| Error::InvalidInput("no ensemble rows".into()))?,
    };
    Ok((comparison, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_names() {
        assert_eq!("alpha".parse::<SweepParam>().unwrap(), SweepParam::Alpha);
        assert_eq!("kd_lambda".parse::<SweepParam>().unwrap(), SweepParam::KdLambda);
        assert_eq!("ensemble_lambda".parse::<SweepParam>().unwrap(), SweepParam::EnsembleLambda);
        assert!("lambda".parse::<SweepParam>().is_err());
    }

    #[test]
    fn grid_validation() {
        let t = ExperimentConfig::new(Method::Ft);
        assert!(sweep_configs(&t, SweepParam::Alpha, &[]).is_err());
        assert!(sweep_configs(&t, SweepParam::Alpha, &[1.0, -2.0]).is_err());
        assert!(sweep_configs(&t, SweepParam::KdLambda, &[0.0, 1.01]).is_err());
        let cs = sweep_configs(&t, SweepParam::EnsembleLambda, &[0.0, 0.5]).unwrap();
        assert_eq!(cs[1].method, Method::Ensemble { lambda: 0.5 });
    }

    #[test]
    fn best_of_prefers_earlier_on_ties() {
        let rows = vec![
            MetricsRow::new(Method::Kd { lambda: 0.0 }, 0, 0.8, 0.6).unwrap(),
            MetricsRow::new(Method::Kd { lambda: 0.5 }, 0, 0.6, 0.8).unwrap(),
            MetricsRow::new(Method::Kd { lambda: 1.0 }, 0, 0.5, 0.5).unwrap(),
        ];
        let b = best_of(&rows, SweepParam::KdLambda, &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(b.method, Method::Kd { lambda: 0.0 });
    }
}
