//! Small dense linear-algebra helpers on top of nalgebra.
//!
//! Least-squares and rank decisions go through a Householder QR with
//! column-norm pivoting; square systems from the sandwich estimator go
//! through LU with partial pivoting.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot threshold below which a column is considered dependent.
pub const RANK_TOL: f64 = 1e-10;

/// Householder QR with column pivoting, `A P = Q R`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    /// Householder vectors below the diagonal, R on and above it.
    packed: DMatrix<f64>,
    /// Scalar factors of the reflectors.
    betas: Vec<f64>,
    /// Diagonal of R (signed).
    rdiag: Vec<f64>,
    /// `perm[k]` is the original column placed at position k.
    perm: Vec<usize>,
}

impl PivotedQr {
    pub fn new(a: &DMatrix<f64>) -> Self {
        let (m, n) = a.shape();
        let mut qr = a.clone();
        let kmax = m.min(n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n).map(|j| qr.column(j).norm_squared()).collect();
        let mut betas = Vec::with_capacity(kmax);
        let mut rdiag = Vec::with_capacity(kmax);

        for k in 0..kmax {
            // Recompute remaining norms exactly; the matrices here are narrow.
            for j in k..n {
                norms[j] = qr.view((k, j), (m - k, 1)).norm_squared();
            }
            let (piv, _) = (k..n).fold((k, -1.0), |(bi, bv), j| {
                if norms[j] > bv {
                    (j, norms[j])
                } else {
                    (bi, bv)
                }
            });
            if piv != k {
                qr.swap_columns(k, piv);
                perm.swap(k, piv);
                norms.swap(k, piv);
            }

            let alpha = qr.view((k, k), (m - k, 1)).norm();
            if alpha == 0.0 {
                betas.push(0.0);
                rdiag.push(0.0);
                continue;
            }
            let x0 = qr[(k, k)];
            let r = if x0 > 0.0 { -alpha } else { alpha };
            // v = x - r e1, stored in place with v[0] kept separately.
            let v0 = x0 - r;
            qr[(k, k)] = v0;
            let vnorm2 = qr.view((k, k), (m - k, 1)).norm_squared();
            let beta = 2.0 / vnorm2;
            for j in (k + 1)..n {
                let mut dot = 0.0;
                for i in k..m {
                    dot += qr[(i, k)] * qr[(i, j)];
                }
                let s = beta * dot;
                for i in k..m {
                    let vi = qr[(i, k)];
                    qr[(i, j)] -= s * vi;
                }
            }
            betas.push(beta);
            rdiag.push(r);
        }

        PivotedQr {
            packed: qr,
            betas,
            rdiag,
            perm,
        }
    }

    /// Numerical rank under the relative pivot threshold `tol`.
    pub fn rank(&self, tol: f64) -> usize {
        let lead = self.rdiag.first().map(|v| v.abs()).unwrap_or(0.0);
        if lead == 0.0 {
            return 0;
        }
        self.rdiag.iter().take_while(|d| d.abs() > tol * lead).count()
    }

    /// Ratio of the smallest to the largest pivot magnitude.
    pub fn pivot_ratio(&self) -> f64 {
        let lead = self.rdiag.first().map(|v| v.abs()).unwrap_or(0.0);
        let last = self.rdiag.last().map(|v| v.abs()).unwrap_or(0.0);
        if lead == 0.0 {
            0.0
        } else {
            last / lead
        }
    }

    /// Original column indices in pivot order.
    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    fn apply_qt(&self, b: &mut DVector<f64>) {
        let m = self.packed.nrows();
        for (k, &beta) in self.betas.iter().enumerate() {
            if beta == 0.0 {
                continue;
            }
            let mut dot = 0.0;
            for i in k..m {
                dot += self.packed[(i, k)] * b[i];
            }
            let s = beta * dot;
            for i in k..m {
                b[i] -= s * self.packed[(i, k)];
            }
        }
    }

    /// Least-squares solution of `A x ≈ b`; fails when `A` is rank deficient.
    pub fn solve_least_squares(&self, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        let (m, n) = self.packed.shape();
        if b.len() != m {
            return Err(Error::Dimension(format!(
                "right-hand side has {} rows, matrix has {}",
                b.len(),
                m
            )));
        }
        if m < n || self.rank(tol) < n {
            return Err(Error::SingularDesign(format!(
                "rank {} < {} columns (relative pivot threshold {:e})",
                self.rank(tol),
                n,
                tol
            )));
        }
        let mut qtb = b.clone();
        self.apply_qt(&mut qtb);
        let mut z = DVector::zeros(n);
        for k in (0..n).rev() {
            let mut s = qtb[k];
            for j in (k + 1)..n {
                s -= self.packed[(k, j)] * z[j];
            }
            z[k] = s / self.rdiag[k];
        }
        let mut x = DVector::zeros(n);
        for (k, &orig) in self.perm.iter().enumerate() {
            x[orig] = z[k];
        }
        Ok(x)
    }
}

/// Least squares with a rank check at [`RANK_TOL`].
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    PivotedQr::new(a).solve_least_squares(b, RANK_TOL)
}

/// Selects the given columns of `x`.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, j| x[(i, cols[j])])
}

/// Selects the given rows of `x`.
pub fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)])
}

/// 2-norm condition number after symmetric diagonal equilibration.
///
/// Rows and columns are scaled by `1/sqrt(|a_ii|)` so that covariate units do
/// not masquerade as ill-conditioning. A zero diagonal entry yields infinity.
pub fn equilibrated_condition(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut scale = Vec::with_capacity(n);
    for i in 0..n {
        let d = a[(i, i)].abs();
        if !(d > 0.0) || !d.is_finite() {
            return f64::INFINITY;
        }
        scale.push(1.0 / d.sqrt());
    }
    let scaled = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * scale[i] * scale[j]);
    if scaled.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let sv = scaled.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
