//! Training objectives and their gradients with respect to the logits.
//!
//! All three objectives share one shape,
//!
//! ```text
//! total = (1 - w) * ce + alpha * w * kl
//! ```
//!
//! with `w = 0, alpha = 1` for plain fine-tuning, `w = lambda, alpha = 1` for
//! constant-weight distillation and the per-sample adaptive
//! `w = f_t / (f_t + zs_t)` for the prompt-regularized objective. Here `kl` is
//! `KL(zs || f)`, so its gradient with respect to the logits is `f - zs`.
//!
//! The adaptive weight is a per-sample constant: it is read off the current
//! prediction and never differentiated.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Error, Result};
use crate::prob::{OneHot, ProbVector, PROB_FLOOR};

/// Default global strength of the prompt regularizer.
pub const DEFAULT_ALPHA: f64 = 2.0;

/// Which objective a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossMode {
    /// Cross-entropy against the ground truth only.
    Ft,
    /// `(1 - lambda) * ce + lambda * kl`.
    Kd { lambda: f64 },
    /// `(1 - w) * ce + alpha * w * kl` with the adaptive sample weight `w`.
    #[serde(rename = "proreg")]
    ProReg { alpha: f64 },
}

impl LossMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossMode::Ft => Ok(()),
            LossMode::Kd { lambda } => check_unit_interval("lambda", lambda),
            LossMode::ProReg { alpha } => {
                if alpha > 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidParameter(format!(
                        "alpha must be positive and finite, got {alpha}"
                    )))
                }
            }
        }
    }

    pub fn needs_zero_shot(&self) -> bool {
        !matches!(self, LossMode::Ft)
    }
}

impl std::str::FromStr for LossMode {
    type Err = Error;

    /// Parses `ft`, `kd:<lambda>` or `proreg:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::InvalidParameter(format!("mode {name} needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| Error::InvalidParameter(format!("bad parameter in {s:?}: {e}")))
        };
        let mode = match name {
            "ft" if arg.is_none() => LossMode::Ft,
            "kd" => LossMode::Kd { lambda: num(arg)? },
            "proreg" => LossMode::ProReg { alpha: num(arg)? },
            _ => return Err(Error::InvalidParameter(format!("unknown loss mode {s:?}"))),
        };
        mode.validate()?;
        Ok(mode)
    }
}

fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {v}")))
    }
}

/// Per-sample (or batch-mean) loss components.
///
/// For every mode `total == (1 - weight) * ce + alpha * weight * kl`:
/// FT stores `weight = 0, alpha = 1`, KD stores `weight = lambda, alpha = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub kl: f64,
    pub weight: f64,
    pub alpha: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn compose(ce: f64, kl: f64, weight: f64, alpha: f64) -> Self {
        Self {
            ce,
            kl,
            weight,
            alpha,
            total: (1.0 - weight) * ce + alpha * weight * kl,
        }
    }

    /// Elementwise mean of a set of breakdowns.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.ce += b.ce;
            acc.kl += b.kl;
            acc.weight += b.weight;
            acc.alpha += b.alpha;
            acc.total += b.total;
        }
        LossBreakdown {
            ce: acc.ce / n,
            kl: acc.kl / n,
            weight: acc.weight / n,
            alpha: acc.alpha / n,
            total: acc.total / n,
        }
    }
}

/// Gradient of a scalar loss with respect to the (temperature-scaled) logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGradient(Vec<f64>);

impl LogitGradient {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// `-ln f_t` for the true class `t`.
pub fn cross_entropy(f: &ProbVector, y: &OneHot) -> Result<f64> {
    ensure_dim(f.class_count(), y.class_count())?;
    Ok(-f.get(y.class()).ln())
}

/// `KL(zs || f) = sum_i zs_i * ln(zs_i / f_i)`.
pub fn kl_regularizer(f: &ProbVector, y_zs: &ProbVector) -> Result<f64> {
    ensure_dim(f.class_count(), y_zs.class_count())?;
    let kl: f64 = f
        .probs()
        .iter()
        .zip(y_zs.probs())
        .map(|(&fi, &zi)| zi * (zi.ln() - fi.ln()))
        .sum();
    Ok(kl.max(0.0))
}

pub fn kd_loss(f: &ProbVector, y: &OneHot, y_zs: &ProbVector, lambda: f64) -> Result<LossBreakdown> {
    check_unit_interval("lambda", lambda)?;
    let ce = cross_entropy(f, y)?;
    let kl = kl_regularizer(f, y_zs)?;
    Ok(LossBreakdown::compose(ce, kl, lambda, 1.0))
}

/// Adaptive sample weight `f_t / (f_t + zs_t)`; returns 0.5 when both terms
/// are below the probability floor.
pub fn proreg_weight(f: &ProbVector, y: &OneHot, y_zs: &ProbVector) -> Result<f64> {
    ensure_dim(f.class_count(), y.class_count())?;
    ensure_dim(y_zs.class_count(), y.class_count())?;
    let t = y.class();
    let ft = f.get(t);
    let zt = y_zs.get(t);
    if ft + zt < 2.0 * PROB_FLOOR {
        return Ok(0.5);
    }
    Ok(ft / (ft + zt))
}

pub fn proreg_loss(f: &ProbVector, y: &OneHot, y_zs: &ProbVector, alpha: f64) -> Result<LossBreakdown> {
    LossMode::ProReg { alpha }.validate()?;
    let w = proreg_weight(f, y, y_zs)?;
    let ce = cross_entropy(f, y)?;
    let kl = kl_regularizer(f, y_zs)?;
    Ok(LossBreakdown::compose(ce, kl, w, alpha))
}

/// `f - y`.
pub fn grad_ce_logits(f: &ProbVector, y: &OneHot) -> Result<LogitGradient> {
    ensure_dim(f.class_count(), y.class_count())?;
    Ok(LogitGradient(
        f.probs().iter().enumerate().map(|(i, &fi)| fi - y.get(i)).collect(),
    ))
}

/// `y - zs`: the gradient of `kl - ce`. Independent of the prediction.
pub fn grad_supplementary_logits(y: &OneHot, y_zs: &ProbVector) -> Result<LogitGradient> {
    ensure_dim(y_zs.class_count(), y.class_count())?;
    Ok(LogitGradient(
        y_zs.probs().iter().enumerate().map(|(i, &zi)| y.get(i) - zi).collect(),
    ))
}

fn zero_shot_for<'a>(mode: &LossMode, y_zs: Option<&'a ProbVector>) -> Result<Option<&'a ProbVector>> {
    if mode.needs_zero_shot() && y_zs.is_none() {
        return Err(Error::InvalidInput(
            "this loss mode needs a cached zero-shot prediction".into(),
        ));
    }
    Ok(y_zs)
}

/// Loss and logit gradient of one sample under `mode`.
///
/// `y_zs` may be omitted only for [`LossMode::Ft`]. The adaptive weight is
/// computed once from `f` and used for both outputs.
pub fn sample_objective(
    mode: &LossMode,
    f: &ProbVector,
    y: &OneHot,
    y_zs: Option<&ProbVector>,
) -> Result<(LossBreakdown, LogitGradient)> {
    mode.validate()?;
    let y_zs = zero_shot_for(mode, y_zs)?;
    let ce = cross_entropy(f, y)?;
    let kl = match y_zs {
        Some(z) => kl_regularizer(f, z)?,
        None => 0.0,
    };
    let (weight, alpha) = match *mode {
        LossMode::Ft => (0.0, 1.0),
        LossMode::Kd { lambda } => (lambda, 1.0),
        LossMode::ProReg { alpha } => (proreg_weight(f, y, y_zs.unwrap())?, alpha),
    };
    let grad = weighted_gradient(mode, f, y, y_zs, weight, alpha)?;
    Ok((LossBreakdown::compose(ce, kl, weight, alpha), grad))
}

fn weighted_gradient(
    mode: &LossMode,
    f: &ProbVector,
    y: &OneHot,
    y_zs: Option<&ProbVector>,
    weight: f64,
    alpha: f64,
) -> Result<LogitGradient> {
    let ce_grad = grad_ce_logits(f, y)?.into_inner();
    let Some(z) = y_zs.filter(|_| mode.needs_zero_shot()) else {
        return Ok(LogitGradient(ce_grad));
    };
    ensure_dim(f.class_count(), z.class_count())?;
    let g = ce_grad
        .iter()
        .zip(f.probs().iter().zip(z.probs()))
        .map(|(&dce, (&fi, &zi))| (1.0 - weight) * dce + alpha * weight * (fi - zi))
        .collect();
    Ok(LogitGradient(g))
}

/// Gradient of the total loss with respect to the logits:
///
/// * FT: `f - y`
/// * KD: `(1 - lambda)(f - y) + lambda (f - zs)`
/// * ProReg: `(1 - w)(f - y) + alpha w (f - zs)` with `w` held constant.
pub fn grad_total_logits(
    mode: &LossMode,
    f: &ProbVector,
    y: &OneHot,
    y_zs: Option<&ProbVector>,
) -> Result<LogitGradient> {
    sample_objective(mode, f, y, y_zs).map(|(_, g)| g)
}

/// Same as [`grad_total_logits`] for ProReg but with a caller-supplied weight.
pub fn grad_proreg_with_weight(
    f: &ProbVector,
    y: &OneHot,
    y_zs: &ProbVector,
    weight: f64,
    alpha: f64,
) -> Result<LogitGradient> {
    let mode = LossMode::ProReg { alpha };
    mode.validate()?;
    weighted_gradient(&mode, f, y, Some(y_zs), weight, alpha)
}

/// Central-difference estimate of `d loss / d point`.
pub fn central_difference_gradient<F>(loss: F, point: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    let mut probe = point.to_vec();
    let mut out = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = loss(&probe)?;
        probe[i] = orig - step;
        let down = loss(&probe)?;
        probe[i] = orig;
        let d = (up - down) / (2.0 * step);
        if !d.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at coordinate {i} is {d}"
            )));
        }
        out.push(d);
    }
    Ok(out)
}

/// Largest absolute difference between `analytic` and a central-difference
/// estimate of the gradient of `loss` at `point`.
pub fn finite_difference_check<F>(loss: F, analytic: &[f64], point: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    ensure_dim(point.len(), analytic.len())?;
    let numeric = central_difference_gradient(loss, point, step)?;
    Ok(numeric
        .iter()
        .zip(analytic)
        .map(|(n, a)| (n - a).abs())
        .fold(0.0, f64::max))
}
