//! End-to-end analysis: fit the nuisance models once, then estimate every
//! requested (estimand, flavor) pair with sandwich inference, recording
//! per-row failures instead of aborting.

use serde::Serialize;

use crate::data::{Dataset, Flavor, NuisanceSpec, WateResult, WeightScheme};
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimationInput};
use crate::glm::{fit_linear, fit_logistic, LinearFit, LogisticFit};
use crate::variance::{sandwich, VarianceStatus};
use crate::weights::{
    balance_report, effective_sample_size, ps_summaries, variance_inflation, BalanceReport, PsSummary,
};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub schemes: Vec<WeightScheme>,
    /// `Augmented` and `DoublyRobust` both resolve to the outcome-augmented
    /// estimator defined for each scheme.
    pub flavors: Vec<Flavor>,
    pub level: f64,
    /// Refit both nuisance models on the retained rows of each trimmed estimand.
    pub refit_after_trim: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            schemes: WeightScheme::estimand_set(&[0.05, 0.1, 0.15]).expect("default thresholds are valid"),
            flavors: vec![Flavor::Hajek, Flavor::Augmented],
            level: 0.95,
            refit_after_trim: false,
        }
    }
}

impl AnalysisOptions {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::Config("at least one estimand is required".into()));
        }
        if self.flavors.is_empty() {
            return Err(Error::Config("at least one flavor is required".into()));
        }
        if !(self.level > 0.5 && self.level < 1.0) {
            return Err(Error::Config(format!("level {} outside (0.5, 1)", self.level)));
        }
        Ok(())
    }
}

/// One output row: a result, or the kind and message of the error that prevented it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisRow {
    pub estimand: WeightScheme,
    pub flavor: Flavor,
    pub result: Option<WateResult>,
    pub error_kind: Option<String>,
    pub error: Option<String>,
}

impl AnalysisRow {
    fn new(estimand: WeightScheme, flavor: Flavor, r: Result<WateResult>) -> Self {
        match r {
            Ok(res) => AnalysisRow {
                estimand,
                flavor,
                result: Some(res),
                error_kind: None,
                error: None,
            },
            Err(e) => {
                log::warn!("{} / {}: {e}", estimand.label(), flavor.name());
                AnalysisRow {
                    estimand,
                    flavor,
                    result: None,
                    error_kind: Some(e.kind().to_string()),
                    error: Some(e.to_string()),
                }
            }
        }
    }

    /// Whether this row reports the weighting-only estimator.
    pub fn is_hajek(&self) -> bool {
        self.flavor == Flavor::Hajek
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub ps: LogisticFit,
    pub rows: Vec<AnalysisRow>,
}

/// Flavors actually estimated for `scheme`, in request order without repeats.
pub fn resolve_flavors(scheme: &WeightScheme, requested: &[Flavor]) -> Vec<Result<Flavor>> {
    let mut out: Vec<Result<Flavor>> = Vec::new();
    for f in requested {
        let r = match f {
            Flavor::Hajek => Ok(Flavor::Hajek),
            _ => Flavor::augmented_for(scheme)
                .ok_or_else(|| Error::Unsupported(format!("no outcome-augmented estimator for {}", scheme.label()))),
        };
        let dup = out.iter().any(|o| match (o, &r) {
            (Ok(a), Ok(b)) => a == b,
            (Err(_), Err(_)) => true,
            _ => false,
        });
        if !dup {
            out.push(r);
        }
    }
    out
}

/// Point estimate, weight diagnostics and sandwich inference for one input.
/// A variance that cannot be computed leaves the point estimate in place
/// with a singular-failure status.
pub fn wate_result(input: &EstimationInput, level: f64) -> Result<WateResult> {
    let est = estimate(input)?;
    let ws = input.weights()?;
    let z = input.d.z();
    let ess_treated = effective_sample_size(&ws, z, true)?;
    let ess_control = effective_sample_size(&ws, z, false)?;
    let vi = variance_inflation(&ws, z)?;
    let var = match sandwich(input, est, level) {
        Ok(v) => v,
        Err(e) => {
            log::warn!("{}: sandwich variance unavailable: {e}", input.scheme.label());
            crate::variance::VarianceResult {
                estimate: est,
                se: None,
                ci: None,
                p_value: None,
                level,
                condition_number: f64::INFINITY,
                status: VarianceStatus::SingularFailure,
            }
        }
    };
    Ok(WateResult {
        estimand: input.scheme,
        flavor: input.flavor,
        estimate: est,
        se: var.se,
        ci_low: var.ci.map(|c| c.0),
        ci_high: var.ci.map(|c| c.1),
        p_value: var.p_value,
        level,
        ess_treated,
        ess_control,
        vi,
        n_used: ws.n_used(),
        variance_status: var.status,
        condition_number: var.condition_number,
    })
}

struct Fits {
    ps: LogisticFit,
    or0: Option<Result<LinearFit>>,
    or1: Option<Result<LinearFit>>,
}

fn fit_all(d: &Dataset, spec: &NuisanceSpec, outcome: bool) -> Result<Fits> {
    let ps = fit_logistic(d, spec)?;
    let (or0, or1) = if outcome {
        (Some(fit_linear(d, spec, false)), Some(fit_linear(d, spec, true)))
    } else {
        (None, None)
    };
    Ok(Fits { ps, or0, or1 })
}

fn outcome_fit(f: &Option<Result<LinearFit>>) -> Result<Option<&LinearFit>> {
    match f {
        None => Ok(None),
        Some(Ok(fit)) => Ok(Some(fit)),
        Some(Err(e)) => Err(Error::Config(format!("outcome model unavailable ({}): {e}", e.kind()))),
    }
}

fn estimate_with(d: &Dataset, fits: &Fits, scheme: WeightScheme, flavor: Flavor, level: f64) -> Result<WateResult> {
    let (or0, or1) = if flavor == Flavor::Hajek {
        (None, None)
    } else {
        (outcome_fit(&fits.or0)?, outcome_fit(&fits.or1)?)
    };
    let input = EstimationInput {
        d,
        ps: &fits.ps,
        or0,
        or1,
        scheme,
        flavor,
    };
    wate_result(&input, level)
}

/// Trimmed estimand by discarding rows outside the thresholds under the
/// full-sample fit, refitting on the rest, and estimating the ATE there.
fn refit_trimmed(
    d: &Dataset,
    spec: &NuisanceSpec,
    full: &Fits,
    scheme: WeightScheme,
    flavor: Flavor,
    level: f64,
) -> Result<WateResult> {
    let ws = crate::weights::compute_weights(d, &full.ps.fitted, &scheme)?;
    let sub = d.subset(&ws.included_rows())?;
    let fits = fit_all(&sub, spec, flavor != Flavor::Hajek)?;
    let mut res = estimate_with(&sub, &fits, WeightScheme::Ate, flavor, level)?;
    res.estimand = scheme;
    Ok(res)
}

/// Runs every requested (scheme, flavor) pair. Only a propensity-model
/// failure aborts the whole analysis.
pub fn analyze(d: &Dataset, spec: &NuisanceSpec, opts: &AnalysisOptions) -> Result<Analysis> {
    opts.validate()?;
    let needs_outcome = opts.flavors.iter().any(|f| *f != Flavor::Hajek);
    let fits = fit_all(d, spec, needs_outcome)?;
    let mut rows = Vec::new();
    for scheme in &opts.schemes {
        for flavor in resolve_flavors(scheme, &opts.flavors) {
            let row = match flavor {
                Err(e) => {
                    let fallback = Flavor::augmented_for(scheme).unwrap_or(Flavor::Augmented);
                    AnalysisRow::new(*scheme, fallback, Err(e))
                }
                Ok(f) => {
                    let r = if opts.refit_after_trim && scheme.is_trimmed() {
                        refit_trimmed(d, spec, &fits, *scheme, f, opts.level)
                    } else {
                        estimate_with(d, &fits, *scheme, f, opts.level)
                    };
                    AnalysisRow::new(*scheme, f, r)
                }
            };
            rows.push(row);
        }
    }
    Ok(Analysis { ps: fits.ps, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssRow {
    pub method: String,
    pub estimand: WeightScheme,
    pub ess_treated: Option<f64>,
    pub ess_control: Option<f64>,
    pub vi: Option<f64>,
    pub error_kind: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub ps: LogisticFit,
    pub ps_summary: [PsSummary; 2],
    pub ess: Vec<EssRow>,
    pub balance: Vec<BalanceReport>,
}

/// Propensity summaries, effective sample sizes and covariate balance for
/// the weighting schemes of the ESS table.
pub fn diagnose(d: &Dataset, spec: &NuisanceSpec, trims: &[f64]) -> Result<Diagnostics> {
    let ps = fit_logistic(d, spec)?;
    let e = &ps.fitted;
    let mut ess = Vec::new();
    let mut balance = Vec::new();
    for scheme in WeightScheme::ess_table_set(trims)? {
        let report = crate::weights::compute_weights(d, e, &scheme).and_then(|ws| balance_report(d, e, &ws));
        match report {
            Ok(b) => {
                ess.push(EssRow {
                    method: scheme.method(),
                    estimand: scheme,
                    ess_treated: Some(b.ess_treated),
                    ess_control: Some(b.ess_control),
                    vi: Some(b.vi),
                    error_kind: None,
                });
                balance.push(b);
            }
            Err(err) => {
                log::warn!("{}: {err}", scheme.method());
                ess.push(EssRow {
                    method: scheme.method(),
                    estimand: scheme,
                    ess_treated: None,
                    ess_control: None,
                    vi: None,
                    error_kind: Some(err.kind().to_string()),
                });
            }
        }
    }
    Ok(Diagnostics {
        ps_summary: ps_summaries(d.z(), e),
        ps,
        ess,
        balance,
    })
}
