//! B-spline form of a univariate truncated-power spline.
//!
//! The truncated power basis is badly conditioned once knots are dense, so
//! ridge steps on a univariate spline design are solved in the B-spline
//! basis of the same space. There the Gram is banded and each knot
//! coefficient is a jump functional of `p + 1` neighbouring B-spline
//! coefficients.

use nalgebra::DMatrix;

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::linalg;

/// Smallest accepted squared pivot ratio of the banded factorization.
const PIVOT_RATIO: f64 = 1e-14;

/// Data locations and basis behind a univariate design matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SplineLayout {
    pub x: Vec<f64>,
    pub basis: BasisSpec,
}

/// Symmetric banded matrix stored by lower diagonals: `band[i][k] = M[i][i - k]`.
#[derive(Debug, Clone)]
pub(crate) struct Banded {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl Banded {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            band: vec![0.0; n * (bw + 1)],
        }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (i - j)
    }

    /// Entry `(i, j)`; zero outside the band.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            0.0
        } else {
            self.band[self.idx(i, j)]
        }
    }

    /// Adds `v` to `(i, j)` and, implicitly, `(j, i)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.idx(i, j);
        self.band[k] += v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Cholesky factor in the same layout, or `None` when a pivot is not
    /// safely positive.
    pub fn cholesky(&self) -> Option<Banded> {
        let (n, bw) = (self.n, self.bw);
        let mut l = Banded::zeros(n, bw);
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for i in 0..n {
            let first = i.saturating_sub(bw);
            for j in first..=i {
                let mut s = self.get(i, j);
                for k in first.max(j.saturating_sub(bw))..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                if i == j {
                    if !(s > 0.0 && s.is_finite()) {
                        return None;
                    }
                    let d = s.sqrt();
                    lo = lo.min(d);
                    hi = hi.max(d);
                    let k = l.idx(i, i);
                    l.band[k] = d;
                } else {
                    let k = l.idx(i, j);
                    l.band[k] = s / l.get(j, j);
                }
            }
        }
        ((lo / hi).powi(2) > PIVOT_RATIO).then_some(l)
    }

    /// Solves `L L^T z = rhs` in place, `self` being the factor `L`.
    pub fn cholesky_solve(&self, rhs: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = rhs[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.get(i, k) * rhs[k];
            }
            rhs[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = rhs[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.get(k, i) * rhs[k];
            }
            rhs[i] = s / self.get(i, i);
        }
    }
}

/// Clamped knot vector and evaluation bounds for a subset of the knots.
struct KnotVector {
    t: Vec<f64>,
    order: usize,
    lo: f64,
}

impl KnotVector {
    fn new(order: usize, interior: &[f64], lo: f64, hi: f64) -> Self {
        let mut t = Vec::with_capacity(interior.len() + 2 * order);
        t.extend(std::iter::repeat_n(lo, order));
        t.extend_from_slice(interior);
        t.extend(std::iter::repeat_n(hi, order));
        Self { t, order, lo }
    }

    /// Number of B-splines.
    fn dim(&self) -> usize {
        self.t.len() - self.order
    }

    /// Index `s` of the last B-spline that is nonzero at `x`, with the
    /// `order` values `B_{s - order + 1}(x), ..., B_s(x)`.
    fn eval(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.order;
        let m = self.dim();
        // span s with t[s] <= x < t[s + 1], restricted to [p - 1, m - 1]
        let upper = self.t[p..m].partition_point(|&v| v <= x);
        let s = p - 1 + upper;
        let degree = p - 1;
        let mut left = vec![0.0; p];
        let mut right = vec![0.0; p];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - self.t[s + 1 - j];
            right[j] = self.t[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            out[j] = saved;
        }
        s
    }

    /// Coefficients of `theta_{s..=s+order}` in the truncated-power
    /// coefficient of interior knot `j` (0-based), returned with `s`.
    fn jump_row(&self, j: usize) -> (usize, Vec<f64>) {
        let p = self.order;
        let q = p - 1;
        let start = j;
        let width = p + 1;
        // level r holds the derivative coefficients theta^{(r)}_i for i in start + r ..= start + p
        let mut level: Vec<Vec<f64>> = (0..width)
            .map(|i| {
                let mut e = vec![0.0; width];
                e[i] = 1.0;
                e
            })
            .collect();
        for r in 1..=q {
            let mut next = vec![vec![0.0; width]; width];
            for off in r..width {
                let i = start + off;
                let scale = (p - r) as f64 / (self.t[i + p - r] - self.t[i]);
                for c in 0..width {
                    next[off][c] = scale * (level[off][c] - level[off - 1][c]);
                }
            }
            level = next;
        }
        let fact: f64 = (1..=q).map(|v| v as f64).product();
        let row = (0..width)
            .map(|c| (level[p][c] - level[p - 1][c]) / fact)
            .collect();
        (start, row)
    }

    /// Monomial coefficients `b_0, ..., b_{p-1}` of the first polynomial piece.
    fn polynomial_part(&self, theta: &[f64]) -> Vec<f64> {
        let p = self.order;
        // theta^{(r)}_r is the r-th derivative at lo for a clamped knot vector
        let mut level: Vec<f64> = theta[..p].to_vec();
        let mut taylor = vec![0.0; p];
        taylor[0] = level[0];
        let mut fact = 1.0;
        for r in 1..p {
            let mut next = vec![0.0; p];
            for i in r..p {
                next[i] = (p - r) as f64 * (level[i] - level[i - 1]) / (self.t[i + p - r] - self.t[i]);
            }
            level = next;
            fact *= r as f64;
            taylor[r] = level[r] / fact;
        }
        // expand sum_r taylor_r (x - lo)^r in powers of x
        let mut coeffs = vec![0.0; p];
        for (r, &a) in taylor.iter().enumerate() {
            let mut binom = 1.0;
            for s in (0..=r).rev() {
                // binom = C(r, s)
                coeffs[s] += a * binom * (-self.lo).powi((r - s) as i32);
                binom = binom * s as f64 / (r - s + 1) as f64;
            }
        }
        coeffs
    }
}

/// Ridge solver for one active knot set.
pub(crate) struct BandedSystem {
    knots: KnotVector,
    gram: Banded,
    bty: Vec<f64>,
    rows: Vec<(usize, Vec<f64>)>,
}

impl BandedSystem {
    /// Builds the B-spline Gram for the knots at positions `active` of `layout`.
    pub fn new(layout: &SplineLayout, y: &[f64], active: &[usize]) -> Self {
        let p = layout.basis.order();
        let all = layout.basis.knots();
        let interior: Vec<f64> = active.iter().map(|&j| all[j]).collect();
        let (xmin, xmax) = layout
            .x
            .iter()
            .chain(all)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let pad = 1e-3 * (xmax - xmin).max(1e-300);
        let knots = KnotVector::new(p, &interior, xmin - pad, xmax + pad);
        let m = knots.dim();
        let mut gram = Banded::zeros(m, p);
        let mut bty = vec![0.0; m];
        let mut vals = vec![0.0; p];
        for (&xi, &yi) in layout.x.iter().zip(y) {
            let s = knots.eval(xi, &mut vals);
            let first = s + 1 - p;
            for a in 0..p {
                bty[first + a] += vals[a] * yi;
                for b in 0..=a {
                    gram.add(first + a, first + b, vals[a] * vals[b]);
                }
            }
        }
        let rows = (0..interior.len()).map(|j| knots.jump_row(j)).collect();
        Self {
            knots,
            gram,
            bty,
            rows,
        }
    }

    fn system(&self, ridge: &[f64]) -> Banded {
        let mut a = self.gram.clone();
        for ((start, row), &r) in self.rows.iter().zip(ridge) {
            if r == 0.0 {
                continue;
            }
            for (i, &ri) in row.iter().enumerate() {
                for (j, &rj) in row.iter().enumerate().take(i + 1) {
                    a.add(start + i, start + j, r * ri * rj);
                }
            }
        }
        a
    }

    /// Solves the ridge problem with penalty `sum_j ridge_j beta_j^2` on the
    /// active knot coefficients. Returns the polynomial coefficients followed
    /// by one coefficient per active knot.
    pub fn solve(&self, ridge: &[f64]) -> Result<Vec<f64>> {
        let a = self.system(ridge);
        let theta = match a.cholesky() {
            Some(l) => {
                let mut z = self.bty.clone();
                l.cholesky_solve(&mut z);
                z
            }
            None => {
                let rhs = DMatrix::from_column_slice(self.bty.len(), 1, &self.bty);
                linalg::solve_psd(&a.to_dense(), &rhs)?.as_slice().to_vec()
            }
        };
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("B-spline ridge solve produced non-finite values".into()));
        }
        let mut beta = self.knots.polynomial_part(&theta);
        beta.extend(
            self.rows
                .iter()
                .map(|(start, row)| row.iter().enumerate().map(|(i, r)| r * theta[start + i]).sum::<f64>()),
        );
        Ok(beta)
    }

    /// `tr[(G + P)^{-1} G]` with `G` the B-spline Gram and `P` the ridge penalty.
    pub fn hat_trace(&self, ridge: &[f64]) -> Result<f64> {
        let a = self.system(ridge);
        let m = self.bty.len();
        let bw = self.gram.bw;
        match a.cholesky() {
            Some(l) => {
                let mut total = 0.0;
                let mut col = vec![0.0; m];
                for k in 0..m {
                    col.iter_mut().for_each(|v| *v = 0.0);
                    for i in k.saturating_sub(bw)..(k + bw + 1).min(m) {
                        col[i] = self.gram.get(i, k);
                    }
                    l.cholesky_solve(&mut col);
                    total += col[k];
                }
                Ok(total)
            }
            None => {
                let g = self.gram.to_dense();
                let z = linalg::solve_psd(&a.to_dense(), &g)?;
                Ok(z.trace())
            }
        }
    }
}

/// B-spline design matrix for the given knot subset (test helper).
#[cfg(test)]
fn bspline_design(layout: &SplineLayout, active: &[usize]) -> DMatrix<f64> {
    let sys = BandedSystem::new(layout, &vec![0.0; layout.x.len()], active);
    let p = layout.basis.order();
    let m = sys.knots.dim();
    let mut b = DMatrix::zeros(layout.x.len(), m);
    let mut vals = vec![0.0; p];
    for (r, &xi) in layout.x.iter().enumerate() {
        let s = sys.knots.eval(xi, &mut vals);
        for a in 0..p {
            b[(r, s + 1 - p + a)] = vals[a];
        }
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::design_matrix;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn layout(order: usize, n: usize, knots: Vec<f64>) -> SplineLayout {
        let x = (0..n).map(|i| ((i as f64 + 0.3) / n as f64).powf(1.3)).collect();
        SplineLayout {
            x,
            basis: BasisSpec::new(order, knots).unwrap(),
        }
    }

    #[test]
    fn partition_of_unity() {
        for order in 1..=4 {
            let l = layout(order, 50, vec![0.2, 0.35, 0.6, 0.61]);
            let b = bspline_design(&l, &[0, 1, 2, 3]);
            for r in 0..b.nrows() {
                assert_abs_diff_eq!(b.row(r).sum(), 1.0, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn banded_cholesky_matches_dense() {
        let n = 9;
        let mut a = Banded::zeros(n, 2);
        for i in 0..n {
            a.add(i, i, 4.0 + i as f64);
            if i >= 1 {
                a.add(i, i - 1, -1.0);
            }
            if i >= 2 {
                a.add(i, i - 2, 0.5);
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let mut z = rhs.clone();
        a.cholesky().unwrap().cholesky_solve(&mut z);
        let back = a.to_dense() * DVector::from_vec(z);
        for i in 0..n {
            assert_abs_diff_eq!(back[i], rhs[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn same_space_as_truncated_powers() {
        // Least squares in either basis gives the same fitted values, and
        // the recovered coefficients reproduce them in the truncated basis.
        for order in 2..=4 {
            let l = layout(order, 80, vec![0.1, 0.3, 0.45, 0.7, 0.9]);
            let y: Vec<f64> = l.x.iter().map(|&t| (7.0 * t).sin() + t * t).collect();
            let active = [0, 2, 3, 4];
            let sys = BandedSystem::new(&l, &y, &active);
            let beta = sys.solve(&vec![0.0; active.len()]).unwrap();

            let full = design_matrix(&l.x, &l.basis);
            let mut cols: Vec<usize> = (0..order).collect();
            cols.extend(active.iter().map(|&j| order + j));
            let xa = full.values().select_columns(&cols);
            let ls = xa
                .clone()
                .svd(true, true)
                .solve(&DVector::from_column_slice(&y), 1e-14)
                .unwrap();
            let fit_ls = &xa * &ls;
            let fit_b = &xa * DVector::from_vec(beta.clone());
            for r in 0..y.len() {
                assert_abs_diff_eq!(fit_ls[r], fit_b[r], epsilon = 1e-9);
            }
            for (a, b) in beta.iter().zip(ls.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-6 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn ridge_matches_dense_normal_equations() {
        let l = layout(3, 60, vec![0.2, 0.4, 0.6, 0.8]);
        let y: Vec<f64> = l.x.iter().map(|&t| (5.0 * t).cos()).collect();
        let active = [0, 1, 2, 3];
        let ridge = [3.0, 0.0, 10.0, 0.5];
        let sys = BandedSystem::new(&l, &y, &active);
        let beta = sys.solve(&ridge).unwrap();

        let x = design_matrix(&l.x, &l.basis).into_values();
        let mut m = x.tr_mul(&x);
        for (j, r) in ridge.iter().enumerate() {
            m[(3 + j, 3 + j)] += r;
        }
        let direct = m.clone().lu().solve(&x.tr_mul(&DVector::from_column_slice(&y))).unwrap();
        for (a, b) in beta.iter().zip(direct.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-7 * (1.0 + b.abs()));
        }
        let mut diag = vec![0.0; 3];
        diag.extend_from_slice(&ridge);
        let dense_trace = linalg::hat_trace(&x.tr_mul(&x), &diag).unwrap();
        assert_abs_diff_eq!(sys.hat_trace(&ridge).unwrap(), dense_trace, epsilon = 1e-9);
    }
}
