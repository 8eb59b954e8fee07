//! Parallel replication runner.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::dgp::DgpConfig;
use super::metrics::{compute_metrics, MetricRow};
use super::rng::SimRng;
use super::truth::TruthTable;
use crate::analysis::{analyze, resolve_flavors, AnalysisOptions};
use crate::data::{Flavor, NuisanceSpec, WeightScheme};
use crate::error::{Error, Result};
use crate::linalg::compensated_sum;

/// Aggregated performance of one (estimand, flavor) pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub estimand: WeightScheme,
    pub method: String,
    pub flavor: Flavor,
    pub truth: f64,
    /// `None` when every replicate failed.
    pub metrics: Option<MetricRow>,
    pub mean_ess_treated: Option<f64>,
    pub mean_ess_control: Option<f64>,
    /// Replicates excluded because estimation failed.
    pub n_failed: usize,
    pub failure_kinds: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: DgpConfig,
    pub rows: Vec<SimRow>,
}

impl SimReport {
    pub fn row(&self, estimand: &WeightScheme, flavor: Flavor) -> Option<&SimRow> {
        self.rows.iter().find(|r| &r.estimand == estimand && r.flavor == flavor)
    }
}

struct Draw {
    estimate: f64,
    se: Option<f64>,
    ess: (f64, f64),
}

type RepOutcome = Vec<std::result::Result<Draw, String>>;

fn replicate(cfg: &DgpConfig, index: usize, keys: &[(WeightScheme, Flavor)], opts: &AnalysisOptions) -> RepOutcome {
    let fail_all = |e: Error| -> RepOutcome {
        log::debug!("replicate {index} failed: {e}");
        keys.iter().map(|_| Err(e.kind().to_string())).collect()
    };
    let mut rng = SimRng::new(cfg.seed, index as u64);
    let sample = match cfg.generate(cfg.n, &mut rng) {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let d = &sample.data;
    let spec = match NuisanceSpec::new(&cfg.ps_columns(), &cfg.or_columns(), d.ncols()) {
        Ok(s) => s,
        Err(e) => return fail_all(e),
    };
    let analysis = match analyze(d, &spec, opts) {
        Ok(a) => a,
        Err(e) => return fail_all(e),
    };
    keys.iter()
        .map(|(s, f)| {
            let row = analysis
                .rows
                .iter()
                .find(|r| &r.estimand == s && r.flavor == *f)
                .ok_or_else(|| "missing-row".to_string())?;
            match &row.result {
                Some(r) => Ok(Draw {
                    estimate: r.estimate,
                    se: r.se,
                    ess: (r.ess_treated, r.ess_control),
                }),
                None => Err(row.error_kind.clone().unwrap_or_else(|| "unknown".into())),
            }
        })
        .collect()
}

/// Runs `cfg.reps` independent replicates and summarizes every estimand ×
/// flavor against `truth`. Replicate `i` draws from stream `i` of
/// `cfg.seed`, so the report is identical across runs and thread counts.
pub fn run_replications(cfg: &DgpConfig, truth: &TruthTable) -> Result<SimReport> {
    cfg.validate()?;
    let schemes = WeightScheme::estimand_set(&cfg.trims)?;
    let flavors = cfg.scenario.flavors();
    let mut keys = Vec::new();
    for s in &schemes {
        if truth.get(s).is_none() {
            return Err(Error::Config(format!("truth table has no value for {}", s.label())));
        }
        for f in resolve_flavors(s, &flavors).into_iter().flatten() {
            keys.push((*s, f));
        }
    }
    let opts = AnalysisOptions {
        schemes,
        flavors,
        level: cfg.level,
        refit_after_trim: cfg.refit_after_trim,
    };

    let outcomes: Vec<RepOutcome> = (0..cfg.reps)
        .into_par_iter()
        .map(|i| replicate(cfg, i, &keys, &opts))
        .collect();

    let mut rows = Vec::with_capacity(keys.len());
    for (k, (scheme, flavor)) in keys.iter().enumerate() {
        let tv = truth.get(scheme).expect("checked above");
        let mut est = Vec::new();
        let mut ses = Vec::new();
        let mut ess = Vec::new();
        let mut failure_kinds = BTreeMap::new();
        for o in &outcomes {
            match &o[k] {
                Ok(d) => {
                    est.push(d.estimate);
                    ses.push(d.se);
                    ess.push(d.ess);
                }
                Err(kind) => *failure_kinds.entry(kind.clone()).or_insert(0) += 1,
            }
        }
        let metrics = if est.is_empty() {
            None
        } else {
            Some(compute_metrics(&est, &ses, tv, cfg.level, cfg.re_convention)?)
        };
        let mean = |f: fn(&(f64, f64)) -> f64| {
            (!ess.is_empty()).then(|| compensated_sum(ess.iter().map(f)) / ess.len() as f64)
        };
        rows.push(SimRow {
            estimand: *scheme,
            method: scheme.method(),
            flavor: *flavor,
            truth: tv,
            metrics,
            mean_ess_treated: mean(|p| p.0),
            mean_ess_control: mean(|p| p.1),
            n_failed: cfg.reps - est.len(),
            failure_kinds,
        });
    }
    Ok(SimReport {
        config: cfg.clone(),
        rows,
    })
}
