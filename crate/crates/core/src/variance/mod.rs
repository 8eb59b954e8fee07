//! Sandwich variances from stacked estimating equations.
//!
//! Every estimator is written as the root of `Σᵢ ψ(Oᵢ; θ) = 0`, where θ
//! stacks the propensity coefficients, any outcome-model coefficients,
//! model-mean and weighted-mean parameters. With
//! `A = −N⁻¹ ∂Σψ/∂θ` and `B = N⁻¹ Σ ψψ'`, the variance of `c'θ̂` is
//! `N⁻¹ c'A⁻¹BA⁻ᵀc`.

pub mod normal;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Flavor, WeightScheme};
use crate::error::{Error, Result};
use crate::estimators::EstimationInput;
use crate::glm::expit;
use crate::linalg::{compensated_sum, equilibrated_condition, select_columns, select_rows};
use crate::weights::{dg_de, selection_value};

pub use normal::{normal_cdf, normal_quantile, normal_sf};

/// Condition number of `A` above which a warning is attached.
pub const WARN_CONDITION: f64 = 1e10;
/// Condition number of `A` above which the variance is not reported.
pub const FAIL_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceStatus {
    Ok,
    NearSingularWarning,
    SingularFailure,
}

impl VarianceStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            VarianceStatus::Ok => "ok",
            VarianceStatus::NearSingularWarning => "near-singular-warning",
            VarianceStatus::SingularFailure => "singular-failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceResult {
    pub estimate: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
    pub p_value: Option<f64>,
    pub level: f64,
    pub condition_number: f64,
    pub status: VarianceStatus,
}

/// Wald interval and two-sided normal p-value.
pub fn wald_interval(estimate: f64, se: f64, level: f64) -> Result<(f64, f64, f64)> {
    if !(se >= 0.0) || !se.is_finite() {
        return Err(Error::Domain(format!("standard error {se} is not a finite non-negative number")));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    let q = normal_quantile(0.5 * (1.0 + level));
    let p = if se == 0.0 {
        if estimate == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (2.0 * normal_sf((estimate / se).abs())).min(1.0)
    };
    Ok((estimate - q * se, estimate + q * se, p))
}

/// `∂g/∂β = dg/de · e(1 − e) · V` for the logistic propensity model.
pub fn dg_dbeta(scheme: &WeightScheme, e: f64, v_row: &[f64], z: bool) -> Result<Vec<f64>> {
    let f = dg_de(scheme, e, z)? * e * (1.0 - e);
    Ok(v_row.iter().map(|v| f * v).collect())
}

/// Which stacked system an estimator corresponds to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// θ = (β, μ₁, μ₀).
    Hajek,
    /// θ = (β, α₁, α₀, τ₁, τ₀, μ₁, μ₀): augmented equipoise estimators and
    /// the doubly-robust ATE (including trimmed ATE).
    TwoModel,
    /// θ = (β, α₀, μ₁, μ₀): doubly-robust ATT, residuals around m₀.
    ControlModel,
    /// θ = (β, α₁, μ₁, μ₀): doubly-robust ATC, residuals around m₁.
    TreatedModel,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    k: usize,
    q: usize,
    alpha1: Option<usize>,
    alpha0: Option<usize>,
    tau: Option<usize>,
    mu: usize,
    /// Outcome-model block used for the treated / control residuals.
    treated_resid: Option<usize>,
    control_resid: Option<usize>,
    dim: usize,
}

impl Layout {
    fn new(kind: SystemKind, k: usize, q: usize) -> Self {
        match kind {
            SystemKind::Hajek => Layout {
                k,
                q: 0,
                alpha1: None,
                alpha0: None,
                tau: None,
                mu: k,
                treated_resid: None,
                control_resid: None,
                dim: k + 2,
            },
            SystemKind::TwoModel => Layout {
                k,
                q,
                alpha1: Some(k),
                alpha0: Some(k + q),
                tau: Some(k + 2 * q),
                mu: k + 2 * q + 2,
                treated_resid: Some(k),
                control_resid: Some(k + q),
                dim: k + 2 * q + 4,
            },
            SystemKind::ControlModel => Layout {
                k,
                q,
                alpha1: None,
                alpha0: Some(k),
                tau: None,
                mu: k + q,
                treated_resid: Some(k),
                control_resid: Some(k),
                dim: k + q + 2,
            },
            SystemKind::TreatedModel => Layout {
                k,
                q,
                alpha1: Some(k),
                alpha0: None,
                tau: None,
                mu: k + q,
                treated_resid: Some(k),
                control_resid: Some(k),
                dim: k + q + 2,
            },
        }
    }
}

/// Per-unit quantities at a given β.
struct Unit {
    e: f64,
    g: f64,
    /// dg/de · e(1 − e): multiply by V for ∂g/∂β.
    dg: f64,
    /// Own-arm weight g/e or g/(1 − e).
    w: f64,
    /// ∂w/∂β = dw · V.
    dw: f64,
}

/// The estimating-equation system for one estimator on the rows it uses.
#[derive(Debug, Clone)]
pub struct StackedProblem {
    kind: SystemKind,
    scheme: WeightScheme,
    layout: Layout,
    z: Vec<bool>,
    y: Vec<f64>,
    v: DMatrix<f64>,
    w: DMatrix<f64>,
    eps: f64,
    theta_hat: DVector<f64>,
}

/// The system evaluated at θ̂.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub theta: DVector<f64>,
    pub psi: DMatrix<f64>,
    pub a_n: DMatrix<f64>,
    pub b_n: DMatrix<f64>,
    pub contrast: DVector<f64>,
}

impl StackedProblem {
    /// Builds the system for `input`, restricted to rows kept by trimming.
    pub fn from_input(input: &EstimationInput) -> Result<Self> {
        input.validate()?;
        let kind = match (input.flavor, input.scheme) {
            (Flavor::Hajek, _) => SystemKind::Hajek,
            (Flavor::DoublyRobust, WeightScheme::Att) => SystemKind::ControlModel,
            (Flavor::DoublyRobust, WeightScheme::Atc) => SystemKind::TreatedModel,
            _ => SystemKind::TwoModel,
        };
        let ws = input.weights()?;
        let rows = ws.included_rows();
        let d = input.d;
        let xr = select_rows(d.x(), &rows);
        let v = select_columns(&xr, &input.ps.columns);
        let z: Vec<bool> = rows.iter().map(|&i| d.z()[i]).collect();
        let y: Vec<f64> = rows.iter().map(|&i| d.y()[i]).collect();

        let need = |arm: bool| -> Result<&crate::glm::LinearFit> {
            let f = if arm { input.or1 } else { input.or0 };
            f.ok_or_else(|| Error::Config("outcome model required for the augmented variance".into()))
        };
        let (w, a1, a0): (DMatrix<f64>, Option<Vec<f64>>, Option<Vec<f64>>) = match kind {
            SystemKind::Hajek => (DMatrix::zeros(rows.len(), 0), None, None),
            SystemKind::TwoModel => {
                let (f1, f0) = (need(true)?, need(false)?);
                if f1.columns != f0.columns {
                    return Err(Error::Dimension("outcome models use different columns".into()));
                }
                (select_columns(&xr, &f1.columns), Some(f1.alpha.clone()), Some(f0.alpha.clone()))
            }
            SystemKind::ControlModel => {
                let f0 = need(false)?;
                (select_columns(&xr, &f0.columns), None, Some(f0.alpha.clone()))
            }
            SystemKind::TreatedModel => {
                let f1 = need(true)?;
                (select_columns(&xr, &f1.columns), Some(f1.alpha.clone()), None)
            }
        };

        let layout = Layout::new(kind, v.ncols(), w.ncols());
        let mut prob = StackedProblem {
            kind,
            scheme: input.scheme,
            layout,
            z,
            y,
            v,
            w,
            eps: input.ps.eps_ps,
            theta_hat: DVector::zeros(layout.dim),
        };
        let mut theta = DVector::zeros(layout.dim);
        theta.rows_mut(0, layout.k).copy_from_slice(&input.ps.beta);
        if let (Some(o), Some(a)) = (layout.alpha1, &a1) {
            theta.rows_mut(o, layout.q).copy_from_slice(a);
        }
        if let (Some(o), Some(a)) = (layout.alpha0, &a0) {
            theta.rows_mut(o, layout.q).copy_from_slice(a);
        }
        prob.solve_means(&mut theta)?;
        prob.theta_hat = theta;
        Ok(prob)
    }

    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    /// `c` with `c'θ` the estimate.
    pub fn contrast(&self) -> DVector<f64> {
        let mut c = DVector::zeros(self.layout.dim);
        c[self.layout.mu] = 1.0;
        c[self.layout.mu + 1] = -1.0;
        if let Some(t) = self.layout.tau {
            c[t] = 1.0;
            c[t + 1] = -1.0;
        }
        c
    }

    fn unit(&self, i: usize, beta: &DVector<f64>) -> Result<Unit> {
        let eta = self.v.row(i).dot(&beta.transpose());
        let e = expit(eta).clamp(self.eps, 1.0 - self.eps);
        let z = self.z[i];
        let g = selection_value(&self.scheme, e, z)?;
        let gd = dg_de(&self.scheme, e, z)?;
        let (w, dw) = if z {
            (g / e, (1.0 - e) * (gd - g / e))
        } else {
            (g / (1.0 - e), e * (gd + g / (1.0 - e)))
        };
        Ok(Unit {
            e,
            g,
            dg: gd * e * (1.0 - e),
            w,
            dw,
        })
    }

    fn model(&self, i: usize, theta: &DVector<f64>, offset: Option<usize>) -> f64 {
        match offset {
            Some(o) => self.w.row(i).dot(&theta.rows(o, self.layout.q).transpose()),
            None => 0.0,
        }
    }

    fn resid_model(&self, i: usize, theta: &DVector<f64>) -> f64 {
        let off = if self.z[i] {
            self.layout.treated_resid
        } else {
            self.layout.control_resid
        };
        self.model(i, theta, off)
    }

    /// Closes the model-mean and weighted-mean blocks given β and α.
    fn solve_means(&self, theta: &mut DVector<f64>) -> Result<()> {
        let l = self.layout;
        let beta = theta.rows(0, l.k).into_owned();
        let units = (0..self.n()).map(|i| self.unit(i, &beta)).collect::<Result<Vec<_>>>()?;
        if let Some(t) = l.tau {
            let gs = compensated_sum(units.iter().map(|u| u.g));
            let m1 = compensated_sum((0..self.n()).map(|i| units[i].g * self.model(i, theta, l.alpha1)));
            let m0 = compensated_sum((0..self.n()).map(|i| units[i].g * self.model(i, theta, l.alpha0)));
            theta[t] = m1 / gs;
            theta[t + 1] = m0 / gs;
        }
        for (arm, off) in [(true, 0), (false, 1)] {
            let rows = || (0..self.n()).filter(move |&i| self.z[i] == arm);
            let den = compensated_sum(rows().map(|i| units[i].w));
            if !(den > 0.0) {
                return Err(Error::DegenerateArm(format!(
                    "{} arm weights sum to {den}",
                    if arm { "treated" } else { "control" }
                )));
            }
            let num = compensated_sum(rows().map(|i| units[i].w * (self.y[i] - self.resid_model(i, theta))));
            theta[l.mu + off] = num / den;
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("non-finite parameter in stacked system".into()));
        }
        Ok(())
    }

    /// Per-unit estimating functions, one row per unit.
    pub fn psi(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let l = self.layout;
        let n = self.n();
        let beta = theta.rows(0, l.k).into_owned();
        let mut psi = DMatrix::zeros(n, l.dim);
        for i in 0..n {
            let u = self.unit(i, &beta)?;
            let z = self.z[i];
            let zf = if z { 1.0 } else { 0.0 };
            for j in 0..l.k {
                psi[(i, j)] = (zf - u.e) * self.v[(i, j)];
            }
            for (off, arm) in [(l.alpha1, true), (l.alpha0, false)] {
                if let Some(o) = off {
                    if z == arm {
                        let r = self.y[i] - self.model(i, theta, Some(o));
                        for j in 0..l.q {
                            psi[(i, o + j)] = self.w[(i, j)] * r;
                        }
                    }
                }
            }
            if let Some(t) = l.tau {
                psi[(i, t)] = u.g * (self.model(i, theta, l.alpha1) - theta[t]);
                psi[(i, t + 1)] = u.g * (self.model(i, theta, l.alpha0) - theta[t + 1]);
            }
            let col = if z { l.mu } else { l.mu + 1 };
            psi[(i, col)] = u.w * (self.y[i] - self.resid_model(i, theta) - theta[col]);
        }
        Ok(psi)
    }

    /// Analytic `A = −N⁻¹ ∂Σψ/∂θ`.
    pub fn a_n(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let l = self.layout;
        let n = self.n();
        let beta = theta.rows(0, l.k).into_owned();
        let mut a = DMatrix::zeros(l.dim, l.dim);
        for i in 0..n {
            let u = self.unit(i, &beta)?;
            let z = self.z[i];
            let vi = self.v.row(i);
            let wi = self.w.row(i);
            let h = u.e * (1.0 - u.e);
            for r in 0..l.k {
                for c in 0..l.k {
                    a[(r, c)] += h * vi[r] * vi[c];
                }
            }
            for (off, arm) in [(l.alpha1, true), (l.alpha0, false)] {
                if let Some(o) = off {
                    if z == arm {
                        for r in 0..l.q {
                            for c in 0..l.q {
                                a[(o + r, o + c)] += wi[r] * wi[c];
                            }
                        }
                    }
                }
            }
            if let Some(t) = l.tau {
                for (row, aoff) in [(t, l.alpha1), (t + 1, l.alpha0)] {
                    let m = self.model(i, theta, aoff);
                    for c in 0..l.k {
                        a[(row, c)] -= u.dg * (m - theta[row]) * vi[c];
                    }
                    if let Some(o) = aoff {
                        for c in 0..l.q {
                            a[(row, o + c)] -= u.g * wi[c];
                        }
                    }
                    a[(row, row)] += u.g;
                }
            }
            let row = if z { l.mu } else { l.mu + 1 };
            let roff = if z { l.treated_resid } else { l.control_resid };
            let resid = self.y[i] - self.resid_model(i, theta) - theta[row];
            for c in 0..l.k {
                a[(row, c)] -= u.dw * resid * vi[c];
            }
            if let Some(o) = roff {
                for c in 0..l.q {
                    a[(row, o + c)] += u.w * wi[c];
                }
            }
            a[(row, row)] += u.w;
        }
        Ok(a / n as f64)
    }

    /// `ψ`, `A`, `B` and `c` at θ̂.
    pub fn system(&self) -> Result<StackedSystem> {
        let theta = self.theta_hat.clone();
        let psi = self.psi(&theta)?;
        let a_n = self.a_n(&theta)?;
        let b_n = psi.transpose() * &psi / self.n() as f64;
        if psi.iter().any(|v| !v.is_finite()) || a_n.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow("non-finite estimating function".into()));
        }
        Ok(StackedSystem {
            theta,
            psi,
            a_n,
            b_n,
            contrast: self.contrast(),
        })
    }
}

impl StackedSystem {
    pub fn estimate(&self) -> f64 {
        self.contrast.dot(&self.theta)
    }

    /// `N⁻¹ c'A⁻¹BA⁻ᵀc` with its conditioning status.
    pub fn variance(&self) -> (Option<f64>, f64, VarianceStatus) {
        let n = self.psi.nrows() as f64;
        let cond = equilibrated_condition(&self.a_n);
        if !(cond <= FAIL_CONDITION) {
            return (None, cond, VarianceStatus::SingularFailure);
        }
        let Some(u) = self.a_n.transpose().lu().solve(&self.contrast) else {
            return (None, cond, VarianceStatus::SingularFailure);
        };
        let var = (u.transpose() * &self.b_n * &u)[(0, 0)] / n;
        if !var.is_finite() {
            return (None, cond, VarianceStatus::SingularFailure);
        }
        let status = if cond > WARN_CONDITION {
            VarianceStatus::NearSingularWarning
        } else {
            VarianceStatus::Ok
        };
        (Some(var.max(0.0)), cond, status)
    }
}

fn finish(input: &EstimationInput, estimate: f64, level: f64) -> Result<VarianceResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("confidence level {level} outside (0, 1)")));
    }
    let sys = StackedProblem::from_input(input)?.system()?;
    let (var, cond, status) = sys.variance();
    let se = var.map(f64::sqrt);
    let (ci, p_value) = match se {
        Some(s) => {
            let (lo, hi, p) = wald_interval(estimate, s, level)?;
            (Some((lo, hi)), Some(p))
        }
        None => (None, None),
    };
    Ok(VarianceResult {
        estimate,
        se,
        ci,
        p_value,
        level,
        condition_number: cond,
        status,
    })
}

/// Sandwich variance of the Hájek-type estimator.
pub fn sandwich_hajek(input: &EstimationInput, estimate: f64, level: f64) -> Result<VarianceResult> {
    if input.flavor != Flavor::Hajek {
        return Err(Error::Unsupported("sandwich_hajek requires the Hájek flavor".into()));
    }
    finish(input, estimate, level)
}

/// Sandwich variance of the doubly-robust ATE, ATT and ATC estimators.
pub fn sandwich_dr(input: &EstimationInput, estimate: f64, level: f64) -> Result<VarianceResult> {
    if input.flavor != Flavor::DoublyRobust {
        return Err(Error::Unsupported("sandwich_dr requires the doubly-robust flavor".into()));
    }
    finish(input, estimate, level)
}

/// Sandwich variance of the augmented equipoise estimators.
pub fn sandwich_aug(input: &EstimationInput, estimate: f64, level: f64) -> Result<VarianceResult> {
    if input.flavor != Flavor::Augmented {
        return Err(Error::Unsupported("sandwich_aug requires the augmented flavor".into()));
    }
    finish(input, estimate, level)
}

/// Dispatches on the input's flavor.
pub fn sandwich(input: &EstimationInput, estimate: f64, level: f64) -> Result<VarianceResult> {
    match input.flavor {
        Flavor::Hajek => sandwich_hajek(input, estimate, level),
        Flavor::DoublyRobust => sandwich_dr(input, estimate, level),
        Flavor::Augmented => sandwich_aug(input, estimate, level),
    }
}
