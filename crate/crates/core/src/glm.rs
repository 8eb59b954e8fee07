//! Logistic propensity model by iteratively reweighted least squares and
//! per-arm linear outcome models by least squares.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::{Dataset, NuisanceSpec};
use crate::error::{Error, Result};
use crate::linalg::{select_columns, select_rows, PivotedQr, RANK_TOL};

/// Clamp applied to predicted probabilities.
pub const EPS_PS: f64 = 1e-12;
/// Convergence threshold on the scaled score (see [`LogisticOptions`]).
pub const TOL_SCORE: f64 = 1e-8;
pub const MAX_ITER: usize = 100;
/// A linear predictor beyond this magnitude flags (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticOptions {
    /// Iteration stops once `max_j |Σ_i (z_i − e_i) V_ij| / max(1, Σ_i |V_ij|)`
    /// falls below this value.
    pub tol_score: f64,
    pub max_iter: usize,
    pub separation_bound: f64,
    pub eps_ps: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tol_score: TOL_SCORE,
            max_iter: MAX_ITER,
            separation_bound: SEPARATION_BOUND,
            eps_ps: EPS_PS,
        }
    }
}

/// Fitted logistic propensity model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    /// Design columns (indices into the dataset) the coefficients refer to.
    pub columns: Vec<usize>,
    pub beta: Vec<f64>,
    /// Clamped fitted probabilities for every row of the fitting data.
    pub fitted: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after each accepted step, starting from β = 0.
    pub log_likelihood_trace: Vec<f64>,
    /// `max_j |score_j|` at the returned coefficients.
    pub score_norm: f64,
    pub separation_warning: bool,
    pub eps_ps: f64,
}

/// Fitted linear outcome model for one arm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub columns: Vec<usize>,
    pub alpha: Vec<f64>,
    /// `true` for the treated-arm model.
    pub arm: bool,
    /// Predictions for every row of the dataset, both arms.
    pub fitted_all: Vec<f64>,
    /// Number of rows the model was fitted on.
    pub n_arm: usize,
}

/// Numerically stable logistic function.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let t = eta.exp();
        t / (1.0 + t)
    }
}

/// `ln(1 + e^η)` without overflow.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Bernoulli log-likelihood at linear predictor `eta`.
pub fn logistic_log_likelihood(eta: &DVector<f64>, z: &[bool]) -> f64 {
    eta.iter()
        .zip(z)
        .map(|(&h, &t)| if t { h - softplus(h) } else { -softplus(h) })
        .sum()
}

/// Score `Σ_i (z_i − expit(η_i)) V_i`.
pub fn logistic_score(v: &DMatrix<f64>, z: &[bool], beta: &DVector<f64>) -> DVector<f64> {
    let eta = v * beta;
    let r = DVector::from_iterator(
        z.len(),
        eta.iter().zip(z).map(|(&h, &t)| f64::from(u8::from(t)) - expit(h)),
    );
    v.transpose() * r
}

/// Newton direction for the logistic log-likelihood at `eta`, solved as the
/// weighted least-squares problem `min ‖W^{1/2} V δ − W^{-1/2}(z − e)‖`.
fn newton_direction(v: &DMatrix<f64>, z: &[bool], eta: &DVector<f64>) -> Result<DVector<f64>> {
    let (n, k) = v.shape();
    let e: Vec<f64> = eta.iter().map(|&h| expit(h)).collect();
    let sw: Vec<f64> = e.iter().map(|&p| (p * (1.0 - p)).sqrt()).collect();
    let wv = DMatrix::from_fn(n, k, |i, j| sw[i] * v[(i, j)]);
    let rhs = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            if sw[i] > 0.0 {
                (f64::from(u8::from(z[i])) - e[i]) / sw[i]
            } else {
                0.0
            }
        }),
    );
    PivotedQr::new(&wv).solve_least_squares(&rhs, RANK_TOL)
}

/// Fits the propensity model on the columns named in `spec`.
pub fn fit_logistic(d: &Dataset, spec: &NuisanceSpec) -> Result<LogisticFit> {
    fit_logistic_with(d, spec, &LogisticOptions::default())
}

pub fn fit_logistic_with(d: &Dataset, spec: &NuisanceSpec, opts: &LogisticOptions) -> Result<LogisticFit> {
    let v = select_columns(d.x(), spec.ps_columns());
    fit_logistic_design(&v, d.z(), spec.ps_columns().to_vec(), opts)
}

/// IRLS on an explicit design matrix.
pub fn fit_logistic_design(
    v: &DMatrix<f64>,
    z: &[bool],
    columns: Vec<usize>,
    opts: &LogisticOptions,
) -> Result<LogisticFit> {
    let (n, k) = v.shape();
    if z.len() != n {
        return Err(Error::Dimension(format!("design has {n} rows, treatment has {}", z.len())));
    }
    if columns.len() != k {
        return Err(Error::Dimension(format!("{} column labels for {k} columns", columns.len())));
    }
    let qr = PivotedQr::new(v);
    if n < k || qr.rank(RANK_TOL) < k {
        return Err(Error::SingularDesign(format!(
            "propensity design has rank {} < {k}",
            qr.rank(RANK_TOL)
        )));
    }

    let col_scale: Vec<f64> = (0..k)
        .map(|j| v.column(j).iter().map(|x| x.abs()).sum::<f64>().max(1.0))
        .collect();
    let scaled_norm = |s: &DVector<f64>| {
        s.iter()
            .zip(&col_scale)
            .map(|(a, c)| a.abs() / c)
            .fold(0.0, f64::max)
    };

    let mut beta = DVector::zeros(k);
    let mut eta = v * &beta;
    let mut ll = logistic_log_likelihood(&eta, z);
    let mut trace = vec![ll];
    let mut iterations = 0;
    let mut converged = false;
    let mut score;

    loop {
        let e: Vec<f64> = eta.iter().map(|&h| expit(h)).collect();
        let resid = DVector::from_iterator(n, e.iter().zip(z).map(|(&p, &t)| f64::from(u8::from(t)) - p));
        score = v.transpose() * &resid;
        if scaled_norm(&score) <= opts.tol_score {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }

        let delta = match newton_direction(v, z, &eta) {
            Ok(d) => d,
            Err(_) => break,
        };

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta + &delta * step;
            let cand_eta = v * &cand;
            let cand_ll = logistic_log_likelihood(&cand_eta, z);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                beta = cand;
                eta = cand_eta;
                ll = cand_ll.max(ll);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        trace.push(ll);
    }

    if converged {
        // One more Newton step: the convergence test bounds the score, and a
        // final quadratic step brings β to working precision at little cost.
        if let Ok(delta) = newton_direction(v, z, &eta) {
            let cand = &beta + &delta;
            let cand_eta = v * &cand;
            let cand_ll = logistic_log_likelihood(&cand_eta, z);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                let cand_score = logistic_score(v, z, &cand);
                if scaled_norm(&cand_score) <= scaled_norm(&score) {
                    beta = cand;
                    eta = cand_eta;
                    score = cand_score;
                    ll = cand_ll.max(ll);
                }
            }
        }
    }

    let max_eta = eta.iter().fold(0.0_f64, |m, h| m.max(h.abs()));
    let separation_warning = max_eta > opts.separation_bound;
    if separation_warning {
        warn!("propensity model: max |linear predictor| = {max_eta:.1}; possible separation");
    }
    let fitted = eta.iter().map(|&h| clamp_prob(expit(h), opts.eps_ps)).collect();
    let fit = LogisticFit {
        columns,
        beta: beta.iter().copied().collect(),
        fitted,
        converged,
        iterations,
        log_likelihood: ll,
        log_likelihood_trace: trace,
        score_norm: score.amax(),
        separation_warning,
        eps_ps: opts.eps_ps,
    };
    if converged {
        Ok(fit)
    } else {
        Err(Error::Convergence {
            iterations,
            score_norm: fit.score_norm,
            last: Box::new(fit),
        })
    }
}

fn clamp_prob(p: f64, eps: f64) -> f64 {
    p.clamp(eps, 1.0 - eps)
}

/// `expit(Vβ)` clamped to `[ε, 1 − ε]`; `x_rows` holds the model's columns only.
pub fn predict_proba(fit: &LogisticFit, x_rows: &DMatrix<f64>) -> Result<Vec<f64>> {
    if x_rows.ncols() != fit.beta.len() {
        return Err(Error::Dimension(format!(
            "{} columns supplied, model has {}",
            x_rows.ncols(),
            fit.beta.len()
        )));
    }
    let beta = DVector::from_column_slice(&fit.beta);
    Ok((x_rows * beta).iter().map(|&h| clamp_prob(expit(h), fit.eps_ps)).collect())
}

/// Ordinary least squares on the rows of one arm, predicting for all rows.
pub fn fit_linear(d: &Dataset, spec: &NuisanceSpec, arm: bool) -> Result<LinearFit> {
    let w = select_columns(d.x(), spec.or_columns());
    fit_linear_design(&w, d.z(), d.y(), arm, spec.or_columns().to_vec())
}

pub fn fit_linear_design(
    w: &DMatrix<f64>,
    z: &[bool],
    y: &[f64],
    arm: bool,
    columns: Vec<usize>,
) -> Result<LinearFit> {
    let rows: Vec<usize> = (0..z.len()).filter(|&i| z[i] == arm).collect();
    let k = w.ncols();
    if rows.len() < k + 1 {
        return Err(Error::DegenerateArm(format!(
            "{} arm has {} rows for {k} outcome-model columns",
            if arm { "treated" } else { "control" },
            rows.len()
        )));
    }
    let wa = select_rows(w, &rows);
    let ya = DVector::from_iterator(rows.len(), rows.iter().map(|&i| y[i]));
    let alpha = PivotedQr::new(&wa)
        .solve_least_squares(&ya, RANK_TOL)
        .map_err(|e| match e {
            Error::SingularDesign(m) => Error::SingularDesign(format!(
                "{} outcome model: {m}",
                if arm { "treated" } else { "control" }
            )),
            other => other,
        })?;
    let fitted_all = (w * &alpha).iter().copied().collect();
    Ok(LinearFit {
        columns,
        alpha: alpha.iter().copied().collect(),
        arm,
        fitted_all,
        n_arm: rows.len(),
    })
}

/// `Wα` for arbitrary rows holding the model's columns only.
pub fn predict_linear(fit: &LinearFit, w_rows: &DMatrix<f64>) -> Result<Vec<f64>> {
    if w_rows.ncols() != fit.alpha.len() {
        return Err(Error::Dimension(format!(
            "{} columns supplied, model has {}",
            w_rows.ncols(),
            fit.alpha.len()
        )));
    }
    let a = DVector::from_column_slice(&fit.alpha);
    Ok((w_rows * a).iter().copied().collect())
}
