//! CSV renderings of analysis, diagnostic and simulation results.
//!
//! Numbers use Rust's shortest round-trip formatting, so every cell parses
//! back to the identical `f64`. Unavailable values are written as `NA`.

use crate::analysis::{AnalysisRow, EssRow};
use crate::data::Flavor;
use crate::error::{Error, Result};
use crate::simulation::{SimReport, TruthTable};
use crate::weights::{BalanceReport, PsSummary};

pub const NA: &str = "NA";

pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        NA.to_string()
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), num)
}

fn render(header: &[&str], rows: Vec<Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// One row per (estimand, flavor) with full inference and diagnostics.
pub fn results_csv(rows: &[AnalysisRow]) -> Result<String> {
    let header = [
        "estimand",
        "method",
        "flavor",
        "estimate",
        "se",
        "ci_low",
        "ci_high",
        "p_value",
        "level",
        "ess_treated",
        "ess_control",
        "vi",
        "n_used",
        "variance_status",
        "condition_number",
        "error",
    ];
    let body = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.estimand.label(), r.estimand.method(), r.flavor.name().to_string()];
            match &r.result {
                Some(x) => v.extend([
                    num(x.estimate),
                    opt(x.se),
                    opt(x.ci_low),
                    opt(x.ci_high),
                    opt(x.p_value),
                    num(x.level),
                    num(x.ess_treated),
                    num(x.ess_control),
                    num(x.vi),
                    x.n_used.to_string(),
                    x.variance_status.as_str().to_string(),
                    num(x.condition_number),
                    String::new(),
                ]),
                None => {
                    v.extend(std::iter::repeat_n(NA.to_string(), 12));
                    v.push(r.error_kind.clone().unwrap_or_default());
                }
            }
            v
        })
        .collect();
    render(&header, body)
}

/// Wide table: Estimand | Estimation | Standard error | p-value, once for the
/// weighting-only estimator and once for the outcome-augmented one.
pub fn estimates_table_csv(rows: &[AnalysisRow]) -> Result<String> {
    let header = [
        "Estimand",
        "Hajek Estimation",
        "Hajek Standard error",
        "Hajek p-value",
        "Augmented Estimation",
        "Augmented Standard error",
        "Augmented p-value",
    ];
    let mut order = Vec::new();
    for r in rows {
        if !order.contains(&r.estimand) {
            order.push(r.estimand);
        }
    }
    let cells = |row: Option<&AnalysisRow>| -> [String; 3] {
        match row.and_then(|r| r.result.as_ref()) {
            Some(x) => [num(x.estimate), opt(x.se), opt(x.p_value)],
            None => [NA.into(), NA.into(), NA.into()],
        }
    };
    let body = order
        .iter()
        .map(|s| {
            let h = rows.iter().find(|r| &r.estimand == s && r.flavor == Flavor::Hajek);
            let a = rows.iter().find(|r| &r.estimand == s && r.flavor != Flavor::Hajek);
            let mut v = vec![s.label()];
            v.extend(cells(h));
            v.extend(cells(a));
            v
        })
        .collect();
    render(&header, body)
}

pub fn ps_summary_csv(s: &[PsSummary]) -> Result<String> {
    let header = ["group", "N", "Minimum", "25th quantile", "Median", "Mean", "75th quantile", "Maximum"];
    let body = s
        .iter()
        .map(|p| {
            vec![
                p.group.clone(),
                p.n.to_string(),
                num(p.min),
                num(p.q1),
                num(p.median),
                num(p.mean),
                num(p.q3),
                num(p.max),
            ]
        })
        .collect();
    render(&header, body)
}

pub fn ess_csv(rows: &[EssRow]) -> Result<String> {
    let header = ["method", "estimand", "ess_treated", "ess_control", "vi", "error"];
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                r.estimand.label(),
                opt(r.ess_treated),
                opt(r.ess_control),
                opt(r.vi),
                r.error_kind.clone().unwrap_or_default(),
            ]
        })
        .collect();
    render(&header, body)
}

/// Long format: one row per (weighting method, covariate).
pub fn balance_csv(reports: &[BalanceReport]) -> Result<String> {
    let header = ["method", "estimand", "covariate", "smd_unweighted", "smd_weighted"];
    let mut body = Vec::new();
    for b in reports {
        for c in &b.covariates {
            body.push(vec![
                b.method.clone(),
                b.scheme.label(),
                c.covariate.clone(),
                opt(c.smd_unweighted),
                opt(c.smd_weighted),
            ]);
        }
    }
    render(&header, body)
}

pub fn truth_csv(t: &TruthTable) -> Result<String> {
    let header = ["estimand", "truth", "mc_se"];
    let mut body: Vec<Vec<String>> = t
        .entries
        .iter()
        .map(|e| vec![e.estimand.label(), num(e.truth), num(e.mc_se)])
        .collect();
    body.push(vec!["ATT (treated mean)".into(), num(t.att_empirical), NA.into()]);
    body.push(vec!["p".into(), num(t.p), NA.into()]);
    body.push(vec!["p (true propensity)".into(), num(t.p_true), NA.into()]);
    body.push(vec!["r".into(), num(t.r), NA.into()]);
    render(&header, body)
}

pub fn sim_report_csv(r: &SimReport) -> Result<String> {
    let header = [
        "estimand",
        "method",
        "flavor",
        "truth",
        "PE",
        "Bias",
        "ARBias%",
        "RMSE",
        "RRMSE",
        "RE",
        "CP",
        "SD",
        "mean_SE",
        "ESS_treated",
        "ESS_control",
        "n_ok",
        "n_se",
        "n_failed",
        "failure_kinds",
    ];
    let body = r
        .rows
        .iter()
        .map(|row| {
            let mut v = vec![
                row.estimand.label(),
                row.method.clone(),
                row.flavor.name().to_string(),
                num(row.truth),
            ];
            match &row.metrics {
                Some(m) => v.extend([
                    num(m.pe),
                    num(m.bias),
                    num(m.arbias_pct),
                    num(m.rmse),
                    num(m.rrmse),
                    opt(m.re),
                    opt(m.cp),
                    num(m.sd),
                    opt(m.mean_se),
                ]),
                None => v.extend(std::iter::repeat_n(NA.to_string(), 9)),
            }
            v.extend([
                opt(row.mean_ess_treated),
                opt(row.mean_ess_control),
                row.metrics.as_ref().map_or(0, |m| m.n_estimates).to_string(),
                row.metrics.as_ref().map_or(0, |m| m.n_se).to_string(),
                row.n_failed.to_string(),
                row.failure_kinds
                    .iter()
                    .map(|(k, n)| format!("{k}:{n}"))
                    .collect::<Vec<_>>()
                    .join(";"),
            ]);
            v
        })
        .collect();
    render(&header, body)
}
