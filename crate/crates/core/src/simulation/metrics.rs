//! Monte Carlo performance criteria.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::compensated_sum;
use crate::variance::normal::normal_quantile;

/// How the efficiency ratio RE combines the empirical SD with the per-replicate SEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReConvention {
    /// SD of estimates / mean SE.
    #[default]
    SdOverMeanSe,
    /// Mean over replicates of SD / SE.
    MeanOfSdOverSe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub truth: f64,
    /// Number of replicates with an estimate.
    pub n_estimates: usize,
    /// Number of those with a standard error.
    pub n_se: usize,
    /// Mean estimate.
    pub pe: f64,
    pub bias: f64,
    /// |mean((τ̂ − τ)/τ)| · 100.
    pub arbias_pct: f64,
    pub rmse: f64,
    pub rrmse: f64,
    pub sd: f64,
    pub mean_se: Option<f64>,
    pub re: Option<f64>,
    /// Share of Wald intervals covering the truth, over replicates with an SE.
    pub cp: Option<f64>,
}

/// Aggregates replicate estimates against the truth. Replicates without an SE
/// contribute to the point-estimate metrics but not to RE or CP.
pub fn compute_metrics(
    estimates: &[f64],
    ses: &[Option<f64>],
    truth: f64,
    level: f64,
    re: ReConvention,
) -> Result<MetricRow> {
    if estimates.len() != ses.len() {
        return Err(Error::Dimension(format!(
            "{} estimates against {} standard errors",
            estimates.len(),
            ses.len()
        )));
    }
    if estimates.is_empty() {
        return Err(Error::DegenerateData("no estimates to summarize".into()));
    }
    if truth == 0.0 || !truth.is_finite() {
        return Err(Error::Domain(format!("relative metrics are undefined for truth {truth}")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("level {level} outside (0, 1)")));
    }
    let m = estimates.len() as f64;
    let pe = compensated_sum(estimates.iter().copied()) / m;
    let bias = pe - truth;
    let rel = compensated_sum(estimates.iter().map(|e| (e - truth) / truth)) / m;
    let mse = compensated_sum(estimates.iter().map(|e| (e - truth).powi(2))) / m;
    let rmse_rel = compensated_sum(estimates.iter().map(|e| ((e - truth) / truth).powi(2))) / m;
    let sd = if estimates.len() > 1 {
        (compensated_sum(estimates.iter().map(|e| (e - pe).powi(2))) / (m - 1.0)).sqrt()
    } else {
        0.0
    };

    let with_se: Vec<(f64, f64)> = estimates
        .iter()
        .zip(ses)
        .filter_map(|(&e, s)| s.filter(|v| v.is_finite() && *v >= 0.0).map(|s| (e, s)))
        .collect();
    let (mean_se, re_value, cp) = if with_se.is_empty() {
        (None, None, None)
    } else {
        let k = with_se.len() as f64;
        let q = normal_quantile(0.5 + level / 2.0);
        let mean_se = compensated_sum(with_se.iter().map(|p| p.1)) / k;
        let covered = with_se.iter().filter(|(e, s)| (e - truth).abs() <= q * s).count();
        let re_value = match re {
            ReConvention::SdOverMeanSe => (mean_se > 0.0).then(|| sd / mean_se),
            ReConvention::MeanOfSdOverSe => {
                if with_se.iter().all(|p| p.1 > 0.0) {
                    Some(compensated_sum(with_se.iter().map(|p| sd / p.1)) / k)
                } else {
                    None
                }
            }
        };
        (Some(mean_se), re_value, Some(covered as f64 / k))
    };

    Ok(MetricRow {
        truth,
        n_estimates: estimates.len(),
        n_se: with_se.len(),
        pe,
        bias,
        arbias_pct: rel.abs() * 100.0,
        rmse: mse.sqrt(),
        rrmse: rmse_rel.sqrt(),
        sd,
        mean_se,
        re: re_value,
        cp,
    })
}
