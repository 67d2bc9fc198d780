//! Dense factorizations shared by the solver and the selection criteria.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Cholesky pivots smaller than this (squared, relative to the largest) send
/// the solve to the eigen-decomposition path.
const CHOLESKY_PIVOT_RATIO: f64 = 1e-14;
/// Relative eigenvalue cutoff of the pseudo-inverse fallback.
const EIGEN_CUTOFF: f64 = 1e-13;

/// Thin SVD of a design matrix, kept for repeated least-squares work.
pub(crate) struct SvdFactor {
    u: DMatrix<f64>,
    singular: DVector<f64>,
    v_t: DMatrix<f64>,
    s_max: f64,
}

impl SvdFactor {
    pub fn new(x: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(Error::Dimension("empty design matrix".into()));
        }
        let svd = x.clone().svd(true, true);
        let u = svd.u.ok_or_else(|| Error::Singular("SVD did not produce U".into()))?;
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Singular("SVD did not produce V".into()))?;
        let singular = svd.singular_values;
        if singular.iter().any(|s| !s.is_finite()) {
            return Err(Error::Singular("non-finite singular value".into()));
        }
        let s_max = singular.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            u,
            singular,
            v_t,
            s_max,
        })
    }

    /// Number of singular values above `rel_cutoff * s_max`.
    pub fn rank(&self, rel_cutoff: f64) -> usize {
        let tol = rel_cutoff * self.s_max;
        self.singular.iter().filter(|&&s| s > tol).count()
    }

    /// Minimum-norm least-squares solution, discarding singular values at or
    /// below `rel_cutoff * s_max`.
    pub fn min_norm_solve(&self, y: &DVector<f64>, rel_cutoff: f64) -> DVector<f64> {
        let tol = rel_cutoff * self.s_max;
        let uty = self.u.tr_mul(y);
        let mut scaled = DVector::zeros(self.singular.len());
        for (i, &s) in self.singular.iter().enumerate() {
            if s > tol {
                scaled[i] = uty[i] / s;
            }
        }
        self.v_t.tr_mul(&scaled)
    }

    /// Diagonal of `((1/n) X^T X)^+` built from the SVD of `X`, treating
    /// singular values at or below `rel_cutoff * s_max` as zero.
    pub fn gram_pinv_diagonal(&self, n: usize, rel_cutoff: f64) -> Vec<f64> {
        let tol = rel_cutoff * self.s_max;
        let m = self.v_t.ncols();
        let mut diag = vec![0.0; m];
        for (i, &s) in self.singular.iter().enumerate() {
            let s2 = s * s;
            if s > tol && s2 > 0.0 {
                let inv = n as f64 / s2;
                for (j, d) in diag.iter_mut().enumerate() {
                    let v = self.v_t[(i, j)];
                    *d += v * v * inv;
                }
            }
        }
        diag
    }
}

/// Solves `m z = rhs` for a symmetric positive semi-definite `m`.
///
/// Cholesky is tried first. A failed or badly conditioned factorization
/// falls back to the eigen-decomposition pseudo-inverse.
pub(crate) fn solve_psd(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() || m.nrows() != rhs.nrows() {
        return Err(Error::Dimension(format!(
            "system {}x{} with right-hand side of {} rows",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, rhs.ncols()));
    }
    if let Some(chol) = m.clone().cholesky() {
        let l = chol.l_dirty();
        let (lo, hi) = l
            .diagonal()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if lo > 0.0 && (lo / hi).powi(2) > CHOLESKY_PIVOT_RATIO {
            let z = chol.solve(rhs);
            if z.iter().all(|v| v.is_finite()) {
                return Ok(z);
            }
        }
    }
    log::debug!("cholesky rejected for {}x{} system; using eigen pseudo-inverse", m.nrows(), m.ncols());
    pinv_solve(m, rhs)
}

fn pinv_solve(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |acc, &e| acc.max(e.abs()));
    if !top.is_finite() {
        return Err(Error::Singular("non-finite eigenvalue".into()));
    }
    let tol = EIGEN_CUTOFF * top;
    let q = &eig.eigenvectors;
    let mut proj = q.tr_mul(rhs);
    for (i, &e) in eig.eigenvalues.iter().enumerate() {
        let scale = if e > tol { 1.0 / e } else { 0.0 };
        proj.row_mut(i).scale_mut(scale);
    }
    let z = q * proj;
    if z.iter().all(|v| v.is_finite()) {
        Ok(z)
    } else {
        Err(Error::Singular("pseudo-inverse solve produced non-finite values".into()))
    }
}

/// `tr[(G + diag(ridge))^{-1} G]`, the trace of the ridge projection
/// `X (X^T X + diag(ridge))^{-1} X^T` for `G = X^T X`.
pub(crate) fn hat_trace(gram: &DMatrix<f64>, ridge: &[f64]) -> Result<f64> {
    if gram.nrows() != ridge.len() || gram.ncols() != ridge.len() {
        return Err(Error::Dimension(format!(
            "{}x{} Gram with {} ridge entries",
            gram.nrows(),
            gram.ncols(),
            ridge.len()
        )));
    }
    let mut system = gram.clone();
    for (i, r) in ridge.iter().enumerate() {
        system[(i, i)] += r;
    }
    let z = solve_psd(&system, gram)?;
    Ok(z.trace())
}
