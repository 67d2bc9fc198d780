//! Truncated power basis: knot placement, design matrices and evaluation.
//!
//! A spline of order `p` with interior knots `t_1 < ... < t_k` is written as
//!
//! ```text
//! f(x) = b_0 + b_1 x + ... + b_{p-1} x^{p-1} + sum_i b_{p+i-1} (x - t_i)_+^{p-1}
//! ```
//!
//! so deleting knot `t_i` is the same as setting its coefficient to zero.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bspline::SplineLayout;
use crate::error::{Error, Result};

/// Default run probability for the initial knot-count rule.
pub const DEFAULT_ALPHA: f64 = 0.1;
/// Default span divisor for the initial knot-count rule.
pub const DEFAULT_SPAN_DIVISOR: f64 = 3.0;

/// Spline order and interior knots of a truncated power basis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBasisSpec")]
pub struct BasisSpec {
    order: usize,
    knots: Vec<f64>,
}

#[derive(Deserialize)]
struct RawBasisSpec {
    order: usize,
    knots: Vec<f64>,
}

impl TryFrom<RawBasisSpec> for BasisSpec {
    type Error = Error;

    fn try_from(raw: RawBasisSpec) -> Result<Self> {
        BasisSpec::new(raw.order, raw.knots)
    }
}

impl BasisSpec {
    /// Builds a basis of order `order` (`3` is a quadratic spline).
    ///
    /// Knots must be finite and strictly increasing.
    pub fn new(order: usize, knots: Vec<f64>) -> Result<Self> {
        if order == 0 {
            return Err(Error::Domain("spline order must be at least 1".into()));
        }
        if let Some(bad) = knots.iter().find(|t| !t.is_finite()) {
            return Err(Error::Domain(format!("non-finite knot {bad}")));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("knots must be strictly increasing".into()));
        }
        Ok(Self { order, knots })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn num_knots(&self) -> usize {
        self.knots.len()
    }

    /// Number of basis functions, `p + k`.
    pub fn dim(&self) -> usize {
        self.order + self.knots.len()
    }

    /// Evaluates every basis function at `x` into `row`.
    fn fill_row(&self, x: f64, row: &mut [f64]) {
        let p = self.order;
        let mut power = 1.0;
        for slot in row.iter_mut().take(p) {
            *slot = power;
            power *= x;
        }
        for (slot, &t) in row[p..].iter_mut().zip(&self.knots) {
            *slot = truncated_power(x, t, p - 1);
        }
    }
}

/// `(x - t)_+^degree`, with the step convention `0` for `x <= t` when `degree == 0`.
#[inline]
pub fn truncated_power(x: f64, t: f64, degree: usize) -> f64 {
    if x > t {
        (x - t).powi(degree as i32)
    } else {
        0.0
    }
}

/// What a design-matrix column represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnRole {
    /// Constant column shared by all components.
    Intercept,
    /// `x_component^power`, `power >= 1`. Never penalized.
    Power { component: usize, power: usize },
    /// Truncated power at knot `index` of `component`. Penalized.
    Knot { component: usize, index: usize },
}

impl ColumnRole {
    pub fn is_penalized(&self) -> bool {
        matches!(self, ColumnRole::Knot { .. })
    }
}

/// Design matrix together with the role of each column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    values: DMatrix<f64>,
    roles: Vec<ColumnRole>,
    spline: Option<SplineLayout>,
}

impl DesignMatrix {
    /// Wraps a raw matrix; `roles` must have one entry per column.
    pub fn from_parts(values: DMatrix<f64>, roles: Vec<ColumnRole>) -> Result<Self> {
        if values.ncols() != roles.len() {
            return Err(Error::Dimension(format!(
                "{} columns but {} column roles",
                values.ncols(),
                roles.len()
            )));
        }
        Ok(Self {
            values,
            roles,
            spline: None,
        })
    }

    /// Set when the matrix is exactly the univariate design of a basis.
    pub(crate) fn spline_layout(&self) -> Option<&SplineLayout> {
        self.spline.as_ref()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Column indices of the penalized (knot) columns, in column order.
    pub fn penalized_columns(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_penalized())
            .map(|(j, _)| j)
            .collect()
    }

    /// Column indices that are never penalized.
    pub fn unpenalized_columns(&self) -> Vec<usize> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| !r.is_penalized())
            .map(|(j, _)| j)
            .collect()
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }
}

/// Expected length of the longest run of positive or negative errors in `n` trials.
///
/// Returns `-log2(-(1/n) ln(1 - alpha))`.
pub fn lmax(n: usize, alpha: f64) -> Result<f64> {
    if n < 1 {
        return Err(Error::Domain("sample size must be at least 1".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("run probability {alpha} not in (0, 1)")));
    }
    Ok(-(-(1.0 - alpha).ln() / n as f64).log2())
}

/// Minimum number of initial knots, `floor(n * divisor / lmax(n, alpha)) + 1`.
///
/// `divisor` is 3 by default; 2.5 gives the more conservative (smaller) count.
pub fn min_initial_knots(n: usize, alpha: f64, divisor: f64) -> Result<usize> {
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::Domain(format!("span divisor {divisor} must be positive")));
    }
    let run = lmax(n, alpha)?;
    if run <= 0.0 {
        return Err(Error::Domain(format!(
            "expected run length {run} is not positive for n = {n}, alpha = {alpha}"
        )));
    }
    Ok((n as f64 * divisor / run).floor() as usize + 1)
}

/// Places `k` knots at the order statistics `x_([n i / (k + 1)])`, `i = 1..k`.
///
/// Order statistics are 1-based and the index is clamped to `[1, n]`.
/// Repeated values (from tied design points) are collapsed, so fewer than `k`
/// knots may come back.
pub fn place_knots(x: &[f64], k: usize) -> Result<Vec<f64>> {
    let n = x.len();
    if n == 0 {
        return Err(Error::InvalidData("no design points".into()));
    }
    if k == 0 {
        return Err(Error::Domain("knot count must be at least 1".into()));
    }
    if k >= n {
        return Err(Error::Domain(format!(
            "{k} knots would exhaust a sample of {n} points"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite design point".into()));
    }
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut knots: Vec<f64> = (1..=k)
        .map(|i| {
            let idx = (n * i) / (k + 1);
            sorted[idx.clamp(1, n) - 1]
        })
        .collect();
    knots.dedup();
    Ok(knots)
}

/// Evaluates the truncated power basis at every point of `x`.
pub fn design_matrix(x: &[f64], spec: &BasisSpec) -> DesignMatrix {
    let dim = spec.dim();
    let mut values = DMatrix::zeros(x.len(), dim);
    let mut row = vec![0.0; dim];
    for (i, &xi) in x.iter().enumerate() {
        spec.fill_row(xi, &mut row);
        for (j, &v) in row.iter().enumerate() {
            values[(i, j)] = v;
        }
    }
    DesignMatrix {
        values,
        roles: univariate_roles(spec, 0, true),
        spline: Some(SplineLayout {
            x: x.to_vec(),
            basis: spec.clone(),
        }),
    }
}

/// Column roles for one component; `with_intercept` controls whether the
/// constant column is included.
pub(crate) fn univariate_roles(
    spec: &BasisSpec,
    component: usize,
    with_intercept: bool,
) -> Vec<ColumnRole> {
    let mut roles = Vec::with_capacity(spec.dim());
    if with_intercept {
        roles.push(ColumnRole::Intercept);
    }
    roles.extend((1..spec.order()).map(|power| ColumnRole::Power { component, power }));
    roles.extend((0..spec.num_knots()).map(|index| ColumnRole::Knot { component, index }));
    roles
}

/// Evaluates the spline with coefficients `coeffs` at each of `x`.
pub fn predict(coeffs: &[f64], spec: &BasisSpec, x: &[f64]) -> Result<Vec<f64>> {
    if coeffs.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a basis of dimension {}",
            coeffs.len(),
            spec.dim()
        )));
    }
    let mut row = vec![0.0; spec.dim()];
    Ok(x.iter()
        .map(|&xi| {
            spec.fill_row(xi, &mut row);
            row.iter().zip(coeffs).map(|(b, c)| b * c).sum()
        })
        .collect())
}
