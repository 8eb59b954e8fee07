//! Selection functions, balancing weights and weight diagnostics.

use serde::Serialize;

use crate::data::{Dataset, WeightScheme};
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;

fn check_e(e: f64) -> Result<()> {
    if e > 0.0 && e < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("propensity score {e} outside (0, 1)")))
    }
}

/// Selection function `g(e)`. Only truncation depends on the unit's own arm `z`.
///
/// Truncation keeps interior units at `g = 1`; a treated unit with `e < α₁`
/// gets `g = e/α₁` and a control unit with `e > 1 − α₂` gets
/// `g = (1 − e)/α₂`, which caps their weights at `1/α₁` and `1/α₂`. Units in
/// the opposite tail of their own arm get `g = 0`.
pub fn selection_value(scheme: &WeightScheme, e: f64, z: bool) -> Result<f64> {
    check_e(e)?;
    Ok(match scheme {
        WeightScheme::Ate => 1.0,
        WeightScheme::Att => e,
        WeightScheme::Atc => 1.0 - e,
        WeightScheme::TrimmedAte(t) => {
            if e >= t.lower() && e <= 1.0 - t.upper() {
                1.0
            } else {
                0.0
            }
        }
        WeightScheme::TruncatedAte(t) => {
            let interior = if e >= t.lower() && e <= 1.0 - t.upper() { 1.0 } else { 0.0 };
            let tail = if z {
                if e < t.lower() {
                    e / t.lower()
                } else {
                    0.0
                }
            } else if 1.0 - e < t.upper() {
                (1.0 - e) / t.upper()
            } else {
                0.0
            };
            interior + tail
        }
        WeightScheme::Overlap => e * (1.0 - e),
        WeightScheme::Matching => e.min(1.0 - e),
        WeightScheme::Entropy => -(e * e.ln() + (1.0 - e) * (1.0 - e).ln()),
    })
}

/// Derivative `dg/de` (zero almost everywhere for indicator-based schemes;
/// the matching-weight kink at 0.5 is assigned 0).
pub fn dg_de(scheme: &WeightScheme, e: f64, z: bool) -> Result<f64> {
    check_e(e)?;
    Ok(match scheme {
        WeightScheme::Ate | WeightScheme::TrimmedAte(_) => 0.0,
        WeightScheme::Att => 1.0,
        WeightScheme::Atc => -1.0,
        WeightScheme::TruncatedAte(t) => {
            if z && e < t.lower() {
                1.0 / t.lower()
            } else if !z && 1.0 - e < t.upper() {
                -1.0 / t.upper()
            } else {
                0.0
            }
        }
        WeightScheme::Overlap => 1.0 - 2.0 * e,
        WeightScheme::Matching => {
            if e < 0.5 {
                1.0
            } else if e > 0.5 {
                -1.0
            } else {
                0.0
            }
        }
        WeightScheme::Entropy => ((1.0 - e) / e).ln(),
    })
}

/// Per-unit selection values and balancing weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSet {
    pub scheme: WeightScheme,
    pub g: Vec<f64>,
    /// `g/e` for treated rows, `g/(1 − e)` for control rows.
    pub w: Vec<f64>,
    /// `false` only for rows removed by trimming.
    pub included: Vec<bool>,
}

impl WeightSet {
    pub fn n_used(&self) -> usize {
        self.included.iter().filter(|&&b| b).count()
    }

    /// Indices of included rows.
    pub fn included_rows(&self) -> Vec<usize> {
        (0..self.included.len()).filter(|&i| self.included[i]).collect()
    }
}

/// Balancing weights for every row.
pub fn compute_weights(d: &Dataset, e_hat: &[f64], scheme: &WeightScheme) -> Result<WeightSet> {
    compute_weights_raw(d.z(), e_hat, scheme)
}

pub fn compute_weights_raw(z: &[bool], e_hat: &[f64], scheme: &WeightScheme) -> Result<WeightSet> {
    if z.len() != e_hat.len() {
        return Err(Error::Dimension(format!(
            "{} propensity scores for {} rows",
            e_hat.len(),
            z.len()
        )));
    }
    let n = z.len();
    let mut g = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    let mut included = Vec::with_capacity(n);
    for (&t, &e) in z.iter().zip(e_hat) {
        let gi = selection_value(scheme, e, t)?;
        let wi = if t { gi / e } else { gi / (1.0 - e) };
        if !wi.is_finite() {
            return Err(Error::NumericOverflow(format!("weight {wi} at propensity {e}")));
        }
        g.push(gi);
        w.push(wi);
        included.push(!(scheme.is_trimmed() && gi == 0.0));
    }
    Ok(WeightSet {
        scheme: *scheme,
        g,
        w,
        included,
    })
}

/// `(Σw)² / Σw²` over the included rows of one arm.
pub fn effective_sample_size(ws: &WeightSet, z: &[bool], arm: bool) -> Result<f64> {
    let (s, s2, _) = arm_sums(ws, z, arm)?;
    Ok(s * s / s2)
}

fn arm_sums(ws: &WeightSet, z: &[bool], arm: bool) -> Result<(f64, f64, usize)> {
    let vals: Vec<f64> = (0..z.len())
        .filter(|&i| z[i] == arm && ws.included[i])
        .map(|i| ws.w[i])
        .collect();
    let s = compensated_sum(vals.iter().copied());
    let s2 = compensated_sum(vals.iter().map(|w| w * w));
    if vals.is_empty() || s <= 0.0 || s2 <= 0.0 {
        return Err(Error::DegenerateArm(format!(
            "{} arm has no positive weight after weighting/trimming",
            if arm { "treated" } else { "control" }
        )));
    }
    Ok((s, s2, vals.len()))
}

/// Design-effect approximation `(1/N₁ + 1/N₀)⁻¹ Σ_z Σw² / (Σw)²`.
pub fn variance_inflation(ws: &WeightSet, z: &[bool]) -> Result<f64> {
    let (s1, q1, n1) = arm_sums(ws, z, true)?;
    let (s0, q0, n0) = arm_sums(ws, z, false)?;
    let h = 1.0 / (1.0 / n1 as f64 + 1.0 / n0 as f64);
    Ok(h * (q1 / (s1 * s1) + q0 / (s0 * s0)))
}

/// Linear-interpolation (type 7) quantile of sorted data.
pub fn quantile_type7(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Distribution summary of propensity scores within one arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsSummary {
    pub group: String,
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

/// Summary of `values`; NaN statistics for an empty input.
pub fn summarize(group: &str, values: &[f64]) -> PsSummary {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    PsSummary {
        group: group.to_string(),
        n,
        min: s.first().copied().unwrap_or(f64::NAN),
        q1: quantile_type7(&s, 0.25),
        median: quantile_type7(&s, 0.5),
        mean: compensated_sum(s.iter().copied()) / n as f64,
        q3: quantile_type7(&s, 0.75),
        max: s.last().copied().unwrap_or(f64::NAN),
    }
}

/// Treated-arm then control-arm propensity summaries.
pub fn ps_summaries(z: &[bool], e_hat: &[f64]) -> [PsSummary; 2] {
    let pick = |arm: bool| -> Vec<f64> { z.iter().zip(e_hat).filter(|(&t, _)| t == arm).map(|(_, &e)| e).collect() };
    [summarize("Treated", &pick(true)), summarize("Control", &pick(false))]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovariateBalance {
    pub covariate: String,
    /// `None` when the pooled standard deviation is zero.
    pub smd_unweighted: Option<f64>,
    pub smd_weighted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub scheme: WeightScheme,
    pub method: String,
    pub covariates: Vec<CovariateBalance>,
    pub ps_summary: [PsSummary; 2],
    pub ess_treated: f64,
    pub ess_control: f64,
    pub vi: f64,
}

fn weighted_mean(vals: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (a, b): (Vec<f64>, Vec<f64>) = vals.map(|(x, w)| (x * w, w)).unzip();
    compensated_sum(a) / compensated_sum(b)
}

fn sample_var(vals: &[f64]) -> f64 {
    let n = vals.len();
    if n < 2 {
        return 0.0;
    }
    let m = compensated_sum(vals.iter().copied()) / n as f64;
    compensated_sum(vals.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

/// Standardized mean differences of every non-intercept covariate before and
/// after weighting, with a fixed full-sample pooled standard deviation.
pub fn balance_report(d: &Dataset, e_hat: &[f64], ws: &WeightSet) -> Result<BalanceReport> {
    let z = d.z();
    let mut covariates = Vec::with_capacity(d.ncols().saturating_sub(1));
    for j in 1..d.ncols() {
        let col = d.x().column(j);
        let arm_vals = |arm: bool| -> Vec<f64> { (0..d.n()).filter(|&i| z[i] == arm).map(|i| col[i]).collect() };
        let x1 = arm_vals(true);
        let x0 = arm_vals(false);
        let sd = ((sample_var(&x1) + sample_var(&x0)) / 2.0).sqrt();
        let mean = |v: &[f64]| compensated_sum(v.iter().copied()) / v.len() as f64;
        let raw = mean(&x1) - mean(&x0);
        let wmean = |arm: bool| {
            weighted_mean((0..d.n()).filter(|&i| z[i] == arm && ws.included[i]).map(|i| (col[i], ws.w[i])))
        };
        let adj = wmean(true) - wmean(false);
        let defined = sd > 0.0 && sd.is_finite();
        covariates.push(CovariateBalance {
            covariate: d.names()[j].clone(),
            smd_unweighted: defined.then(|| raw / sd),
            smd_weighted: (defined && adj.is_finite()).then(|| adj / sd),
        });
    }
    Ok(BalanceReport {
        scheme: ws.scheme,
        method: ws.scheme.method(),
        covariates,
        ps_summary: ps_summaries(z, e_hat),
        ess_treated: effective_sample_size(ws, z, true)?,
        ess_control: effective_sample_size(ws, z, false)?,
        vi: variance_inflation(ws, z)?,
    })
}
