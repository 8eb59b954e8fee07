//! Point estimators of the weighted average treatment effect.

use crate::data::{Dataset, Flavor, PotentialOutcomeSample, WeightScheme};
use crate::error::{Error, Result};
use crate::glm::{LinearFit, LogisticFit};
use crate::linalg::compensated_sum;
use crate::weights::{compute_weights, selection_value, WeightSet};

/// Everything an estimator needs: data, fitted nuisance models and the target.
#[derive(Debug, Clone, Copy)]
pub struct EstimationInput<'a> {
    pub d: &'a Dataset,
    pub ps: &'a LogisticFit,
    pub or0: Option<&'a LinearFit>,
    pub or1: Option<&'a LinearFit>,
    pub scheme: WeightScheme,
    pub flavor: Flavor,
}

impl<'a> EstimationInput<'a> {
    pub fn hajek(d: &'a Dataset, ps: &'a LogisticFit, scheme: WeightScheme) -> Self {
        EstimationInput {
            d,
            ps,
            or0: None,
            or1: None,
            scheme,
            flavor: Flavor::Hajek,
        }
    }

    /// Checks that the flavor is defined for the scheme and that the fits
    /// match the data.
    pub fn validate(&self) -> Result<()> {
        let n = self.d.n();
        if self.ps.fitted.len() != n {
            return Err(Error::Dimension(format!(
                "propensity fit has {} rows, data has {n}",
                self.ps.fitted.len()
            )));
        }
        match (self.flavor, self.scheme) {
            (Flavor::Hajek, _) => {}
            (
                Flavor::DoublyRobust,
                WeightScheme::Ate | WeightScheme::Att | WeightScheme::Atc | WeightScheme::TrimmedAte(_),
            ) => {}
            (Flavor::Augmented, s) if s.is_equipoise() => {}
            (f, s) => {
                return Err(Error::Unsupported(format!(
                    "{} flavor is not defined for {}",
                    f.name(),
                    s.label()
                )))
            }
        }
        if self.flavor != Flavor::Hajek {
            for fit in [self.or0, self.or1].into_iter().flatten() {
                if fit.fitted_all.len() != n {
                    return Err(Error::Dimension(format!(
                        "outcome fit has {} rows, data has {n}",
                        fit.fitted_all.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<WeightSet> {
        compute_weights(self.d, &self.ps.fitted, &self.scheme)
    }

    fn outcome_fit(&self, arm: bool) -> Result<&'a LinearFit> {
        let f = if arm { self.or1 } else { self.or0 };
        f.ok_or_else(|| {
            Error::Config(format!(
                "{} flavor needs the {} outcome model",
                self.flavor.name(),
                if arm { "treated" } else { "control" }
            ))
        })
    }
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NumericOverflow(format!("{what} evaluated to {v}")))
    }
}

/// Hájek-normalized weighted mean of `r` over the included rows of one arm.
fn arm_mean(ws: &WeightSet, z: &[bool], r: &[f64], arm: bool) -> Result<f64> {
    let rows = || (0..z.len()).filter(move |&i| z[i] == arm && ws.included[i]);
    let den = compensated_sum(rows().map(|i| ws.w[i]));
    if !(den > 0.0) {
        return Err(Error::DegenerateArm(format!(
            "{} arm weights sum to {den}",
            if arm { "treated" } else { "control" }
        )));
    }
    let num = compensated_sum(rows().map(|i| ws.w[i] * r[i]));
    finite(num / den, "weighted arm mean")
}

/// Weighted difference of Hájek-normalized arm means of the outcome.
pub fn hajek_wate(input: &EstimationInput) -> Result<f64> {
    input.validate()?;
    let ws = input.weights()?;
    hajek_from_weights(&ws, input.d.z(), input.d.y())
}

pub fn hajek_from_weights(ws: &WeightSet, z: &[bool], y: &[f64]) -> Result<f64> {
    finite(arm_mean(ws, z, y, true)? - arm_mean(ws, z, y, false)?, "Hájek estimate")
}

/// Doubly-robust estimator for ATE (also on a trimmed sample), ATT and ATC.
pub fn dr_wate(input: &EstimationInput) -> Result<f64> {
    input.validate()?;
    if input.flavor != Flavor::DoublyRobust {
        return Err(Error::Unsupported("dr_wate requires the doubly-robust flavor".into()));
    }
    let ws = input.weights()?;
    let z = input.d.z();
    let y = input.d.y();
    match input.scheme {
        WeightScheme::Att => {
            let m0 = &input.outcome_fit(false)?.fitted_all;
            let r: Vec<f64> = y.iter().zip(m0).map(|(a, b)| a - b).collect();
            hajek_from_weights(&ws, z, &r)
        }
        WeightScheme::Atc => {
            let m1 = &input.outcome_fit(true)?.fitted_all;
            let r: Vec<f64> = y.iter().zip(m1).map(|(a, b)| a - b).collect();
            hajek_from_weights(&ws, z, &r)
        }
        _ => augmented_core(input, &ws),
    }
}

/// Outcome-augmented estimator for the equipoise estimands.
pub fn augmented_wate(input: &EstimationInput) -> Result<f64> {
    input.validate()?;
    if input.flavor != Flavor::Augmented {
        return Err(Error::Unsupported("augmented_wate requires the augmented flavor".into()));
    }
    let ws = input.weights()?;
    augmented_core(input, &ws)
}

/// Weighted residual difference plus the g-weighted mean of `m₁ − m₀`.
fn augmented_core(input: &EstimationInput, ws: &WeightSet) -> Result<f64> {
    let z = input.d.z();
    let y = input.d.y();
    let m1 = &input.outcome_fit(true)?.fitted_all;
    let m0 = &input.outcome_fit(false)?.fitted_all;
    let r: Vec<f64> = (0..z.len()).map(|i| y[i] - if z[i] { m1[i] } else { m0[i] }).collect();
    let resid = arm_mean(ws, z, &r, true)? - arm_mean(ws, z, &r, false)?;
    let rows = || (0..z.len()).filter(|&i| ws.included[i]);
    let gsum = compensated_sum(rows().map(|i| ws.g[i]));
    if !(gsum > 0.0) {
        return Err(Error::DegenerateArm("selection values sum to zero".into()));
    }
    let aug = compensated_sum(rows().map(|i| ws.g[i] * (m1[i] - m0[i]))) / gsum;
    finite(resid + aug, "augmented estimate")
}

/// Dispatches on the input's flavor.
pub fn estimate(input: &EstimationInput) -> Result<f64> {
    match input.flavor {
        Flavor::Hajek => hajek_wate(input),
        Flavor::DoublyRobust => dr_wate(input),
        Flavor::Augmented => augmented_wate(input),
    }
}

/// `Σ g τ / Σ g` with `g` evaluated at known propensity scores.
pub fn population_wate(tau: &[f64], e: &[f64], z: &[bool], scheme: &WeightScheme) -> Result<f64> {
    let g = e
        .iter()
        .zip(z)
        .map(|(&ei, &zi)| selection_value(scheme, ei, zi))
        .collect::<Result<Vec<f64>>>()?;
    let den = compensated_sum(g.iter().copied());
    if !(den > 0.0) {
        return Err(Error::DegenerateData(format!("selection values for {} sum to zero", scheme.label())));
    }
    Ok(compensated_sum(g.iter().zip(tau).map(|(a, b)| a * b)) / den)
}

/// Returns `(ATE, p·ATT + (1 − p)·ATC, gap)` with `p` the mean true propensity.
pub fn estimand_decomposition_check(sample: &PotentialOutcomeSample) -> Result<(f64, f64, f64)> {
    let tau = sample.tau();
    let e = &sample.e_true;
    let z = sample.data.z();
    let ate = population_wate(&tau, e, z, &WeightScheme::Ate)?;
    let att = population_wate(&tau, e, z, &WeightScheme::Att)?;
    let atc = population_wate(&tau, e, z, &WeightScheme::Atc)?;
    let p = compensated_sum(e.iter().copied()) / e.len() as f64;
    let combo = p * att + (1.0 - p) * atc;
    Ok((ate, combo, (ate - combo).abs()))
}
