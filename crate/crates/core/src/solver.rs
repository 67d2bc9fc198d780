//! Penalized least squares by local quadratic approximation (LQA).
//!
//! The SCAD penalty on each standardized knot coefficient `u_j = w_j b_j` is
//! replaced at the current iterate by a quadratic, which turns every step
//! into a ridge regression on the columns still in the model:
//!
//! ```text
//! b_new = (X_a^T X_a + n S)^{-1} X_a^T y,   S_jj = w_j^2 p'(|u_j|) / |u_j|
//! ```
//!
//! Knot coefficients that reach (numerical) zero are removed and stay
//! removed for the rest of the fit. Monomial columns are never penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, DesignMatrix};
use crate::bspline::BandedSystem;
use crate::error::{Error, Result};
use crate::linalg::{self, SvdFactor};
use crate::penalty::{Penalty, ScadParams};

/// Relative cutoff on the singular values of `X` used for the penalty weights.
pub const WEIGHT_PINV_CUTOFF: f64 = 1e-10;

/// Iteration controls for [`lqa_fit`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iterations: usize,
    /// Stop when `max_j |b_new - b_old| / (1 + |b_old|)` drops below this.
    pub convergence_tol: f64,
    /// A knot is removed once `|w_j b_j| < zero_clamp * max(1, max_j |w_j b_j|)`.
    pub zero_clamp: f64,
    /// Relative singular-value cutoff of the least-squares solves.
    pub ridge_jitter: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            convergence_tol: 1e-6,
            zero_clamp: 1e-6,
            ridge_jitter: 1e-10,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Domain("max_iterations must be at least 1".into()));
        }
        for (name, v) in [
            ("convergence_tol", self.convergence_tol),
            ("zero_clamp", self.zero_clamp),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} = {v} must be positive")));
            }
        }
        if !(self.ridge_jitter >= 0.0 && self.ridge_jitter.is_finite()) {
            return Err(Error::Domain(format!(
                "ridge_jitter = {} must be finite and >= 0",
                self.ridge_jitter
            )));
        }
        Ok(())
    }
}

/// Per-knot penalty weights and the knot columns whose weight degenerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyWeights {
    /// One weight per penalized column, in column order.
    pub weights: Vec<f64>,
    /// Positions (within the penalized columns) with a zero weight.
    pub degenerate: Vec<usize>,
}

/// `w_j = [((1/n) X^T X)^+_jj]^{-1/2}` for every penalized column.
///
/// The pseudo-inverse drops singular values of `X` below `1e-10` of the largest.
/// A column whose diagonal entry is not positive gets weight 0 and is
/// reported as degenerate; the solver treats such knots as deleted.
pub fn penalty_weights(x: &DesignMatrix) -> Result<PenaltyWeights> {
    if x.ncols() == 0 {
        return Err(Error::Dimension("design matrix has no columns".into()));
    }
    if x.nrows() == 0 {
        return Err(Error::Dimension("design matrix has no rows".into()));
    }
    let factor = SvdFactor::new(x.values())?;
    Ok(weights_from_factor(&factor, x))
}

fn weights_from_factor(factor: &SvdFactor, x: &DesignMatrix) -> PenaltyWeights {
    let diag = factor.gram_pinv_diagonal(x.nrows(), WEIGHT_PINV_CUTOFF);
    let mut weights = Vec::new();
    let mut degenerate = Vec::new();
    for (pos, col) in x.penalized_columns().into_iter().enumerate() {
        let d = diag[col];
        if d > 0.0 && d.is_finite() {
            weights.push(d.powf(-0.5));
        } else {
            weights.push(0.0);
            degenerate.push(pos);
        }
    }
    PenaltyWeights {
        weights,
        degenerate,
    }
}

/// Minimum-norm least-squares coefficients of `y` on `x`, dropping singular
/// values at or below `ridge_jitter * s_max`.
pub fn initial_coefficients(x: &DesignMatrix, y: &[f64], config: &FitConfig) -> Result<Vec<f64>> {
    config.validate()?;
    check_rows(x, y)?;
    let factor = SvdFactor::new(x.values())?;
    Ok(factor
        .min_norm_solve(&DVector::from_column_slice(y), config.ridge_jitter)
        .as_slice()
        .to_vec())
}

fn check_rows(x: &DesignMatrix, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "design has {} rows but response has {} values",
            x.nrows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("non-finite response value".into()));
    }
    Ok(())
}

fn check_weights(x: &DesignMatrix, weights: &[f64]) -> Result<()> {
    let k = x.penalized_columns().len();
    if weights.len() != k {
        return Err(Error::Dimension(format!(
            "{} weights for {} penalized columns",
            weights.len(),
            k
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain("penalty weights must be finite and >= 0".into()));
    }
    Ok(())
}

/// `||y - X b||^2 + n sum_j p_lambda(|w_j b_j|)` over the penalized columns.
pub fn objective(
    beta: &[f64],
    x: &DesignMatrix,
    y: &[f64],
    params: &ScadParams,
    weights: &[f64],
) -> Result<f64> {
    check_rows(x, y)?;
    check_weights(x, weights)?;
    if beta.len() != x.ncols() {
        return Err(Error::Dimension(format!(
            "{} coefficients for {} columns",
            beta.len(),
            x.ncols()
        )));
    }
    let rss = residual_sum_squares(x.values(), y, beta);
    Ok(rss + penalty_total(beta, x, params, weights))
}

fn penalty_total(beta: &[f64], x: &DesignMatrix, params: &ScadParams, weights: &[f64]) -> f64 {
    let n = x.nrows() as f64;
    let sum: f64 = x
        .penalized_columns()
        .iter()
        .zip(weights)
        .map(|(&col, &w)| params.value((w * beta[col]).abs()))
        .sum();
    n * sum
}

pub(crate) fn residual_sum_squares(x: &DMatrix<f64>, y: &[f64], beta: &[f64]) -> f64 {
    let b = DVector::from_column_slice(beta);
    let fitted = x * b;
    y.iter().zip(fitted.iter()).map(|(a, f)| (a - f).powi(2)).sum()
}

/// Result of one penalized fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedFit {
    /// Full coefficient vector; deleted knots hold exactly zero.
    pub coefficients: Vec<f64>,
    /// Positions (within the penalized columns) of the knots still in the model.
    pub active_knots: Vec<usize>,
    pub weights: Vec<f64>,
    pub params: ScadParams,
    pub iterations: usize,
    pub converged: bool,
    /// Criterion value at the returned coefficients.
    pub objective: f64,
    /// Criterion value at the starting coefficients.
    pub initial_objective: f64,
    /// Number of iterations in which the criterion went up.
    pub objective_increases: usize,
    /// Trace of the final ridge projection.
    pub effective_params: f64,
    pub residual_sum_squares: f64,
}

impl PenalizedFit {
    pub fn lambda(&self) -> f64 {
        self.params.lambda()
    }

    pub fn num_active_knots(&self) -> usize {
        self.active_knots.len()
    }
}

/// Gram matrix and cross products of a design, reused across fits.
pub(crate) struct Problem<'a> {
    design: &'a DesignMatrix,
    y: Vec<f64>,
    gram: DMatrix<f64>,
    xty: DVector<f64>,
    knot_cols: Vec<usize>,
    unpenalized: Vec<usize>,
}

/// Least-squares starting point and its projection rank.
#[derive(Debug, Clone)]
pub(crate) struct LeastSquaresStart {
    pub coefficients: Vec<f64>,
    pub rank: usize,
}

impl<'a> Problem<'a> {
    pub fn new(design: &'a DesignMatrix, y: &[f64]) -> Result<Self> {
        check_rows(design, y)?;
        let x = design.values();
        let yv = DVector::from_column_slice(y);
        Ok(Self {
            design,
            y: y.to_vec(),
            gram: x.tr_mul(x),
            xty: x.tr_mul(&yv),
            knot_cols: design.penalized_columns(),
            unpenalized: design.unpenalized_columns(),
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn least_squares(&self, config: &FitConfig) -> Result<(LeastSquaresStart, SvdFactor)> {
        let factor = SvdFactor::new(self.design.values())?;
        let y = DVector::from_column_slice(&self.y);
        let coefficients = factor
            .min_norm_solve(&y, config.ridge_jitter)
            .as_slice()
            .to_vec();
        let rank = factor.rank(config.ridge_jitter);
        Ok((LeastSquaresStart { coefficients, rank }, factor))
    }

    fn finish(
        &self,
        coefficients: Vec<f64>,
        active_knots: Vec<usize>,
        weights: &[f64],
        params: ScadParams,
        iterations: usize,
        converged: bool,
        initial_objective: f64,
        objective_increases: usize,
        effective_params: f64,
    ) -> PenalizedFit {
        let rss = residual_sum_squares(self.design.values(), &self.y, &coefficients);
        let objective = rss + penalty_total(&coefficients, self.design, &params, weights);
        PenalizedFit {
            coefficients,
            active_knots,
            weights: weights.to_vec(),
            params,
            iterations,
            converged,
            objective,
            initial_objective,
            objective_increases,
            effective_params,
            residual_sum_squares: rss,
        }
    }

    /// Unpenalized fit: the least-squares spline with every knot kept.
    pub fn unpenalized_fit(&self, ls: &LeastSquaresStart, weights: &[f64], params: ScadParams) -> PenalizedFit {
        let obj = self.objective_of(&ls.coefficients, &params, weights);
        self.finish(
            ls.coefficients.clone(),
            (0..self.knot_cols.len()).collect(),
            weights,
            params,
            0,
            true,
            obj,
            0,
            ls.rank as f64,
        )
    }

    fn objective_of(&self, beta: &[f64], params: &ScadParams, weights: &[f64]) -> f64 {
        residual_sum_squares(self.design.values(), &self.y, beta)
            + penalty_total(beta, self.design, params, weights)
    }

    /// Columns (in design order) for the unpenalized set plus `active` knots.
    fn active_columns(&self, active: &[bool]) -> Vec<usize> {
        let mut cols: Vec<usize> = self.unpenalized.clone();
        cols.extend(
            self.knot_cols
                .iter()
                .zip(active)
                .filter(|(_, &a)| a)
                .map(|(&c, _)| c),
        );
        cols.sort_unstable();
        cols
    }

    /// Ridge diagonal `n * S` over `cols` at coefficients `beta`.
    fn ridge_diagonal(
        &self,
        cols: &[usize],
        beta: &[f64],
        params: &ScadParams,
        knot_weight: &[Option<f64>],
    ) -> Vec<f64> {
        let n = self.n() as f64;
        cols.iter()
            .map(|&c| match knot_weight[c] {
                Some(w) => {
                    let u = (w * beta[c]).abs();
                    n * w * w * params.derivative(u) / u
                }
                None => 0.0,
            })
            .collect()
    }

    /// LQA iteration from `start`.
    pub fn fit(
        &self,
        params: ScadParams,
        weights: &[f64],
        config: &FitConfig,
        start: &[f64],
    ) -> Result<PenalizedFit> {
        let p = self.design.ncols();
        let mut knot_weight: Vec<Option<f64>> = vec![None; p];
        for (&c, &w) in self.knot_cols.iter().zip(weights) {
            knot_weight[c] = Some(w);
        }
        let mut beta = start.to_vec();
        let mut active: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
        for (pos, &c) in self.knot_cols.iter().enumerate() {
            if !active[pos] {
                beta[c] = 0.0;
            }
        }
        let initial_objective = self.objective_of(start, &params, weights);
        let mut last_objective = initial_objective;
        let mut increases = 0;
        let mut iterations = 0;
        let mut converged = false;
        let mut banded: Option<(Vec<bool>, BandedSystem)> = None;

        while iterations < config.max_iterations {
            iterations += 1;
            self.clamp(&mut beta, &mut active, weights, config);
            let next = self.ridge_step(&beta, &active, &params, &knot_weight, &mut banded)?;
            let change = beta
                .iter()
                .zip(&next)
                .map(|(old, new)| (new - old).abs() / (1.0 + old.abs()))
                .fold(0.0, f64::max);
            beta = next;

            let obj = self.objective_of(&beta, &params, weights);
            if obj > last_objective + 1e-10 * last_objective.abs().max(1.0) {
                increases += 1;
                log::debug!(
                    "objective increased at iteration {iterations}: {last_objective} -> {obj} (lambda = {})",
                    params.lambda()
                );
            }
            last_objective = obj;
            if change < config.convergence_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            log::debug!(
                "LQA stopped after {iterations} iterations without converging (lambda = {})",
                params.lambda()
            );
        }

        // Coefficients that sit below the clamp after the last step are deleted
        // too, and the remaining columns refitted once without them.
        let before = active.clone();
        self.clamp(&mut beta, &mut active, weights, config);
        if active != before {
            beta = self.ridge_step(&beta, &active, &params, &knot_weight, &mut banded)?;
        }
        let cols = self.active_columns(&active);
        let ridge = self.ridge_diagonal(&cols, &beta, &params, &knot_weight);
        let effective = match self.banded_for(&active, &mut banded) {
            Some(sys) => sys.hat_trace(&ridge[self.unpenalized.len()..])?,
            None => {
                let gram = self.gram.select_rows(&cols).select_columns(&cols);
                linalg::hat_trace(&gram, &ridge)?
            }
        };

        let active_knots = active
            .iter()
            .enumerate()
            .filter(|(_, &a)| a)
            .map(|(pos, _)| pos)
            .collect();
        Ok(self.finish(
            beta,
            active_knots,
            weights,
            params,
            iterations,
            converged,
            initial_objective,
            increases,
            effective,
        ))
    }

    /// One ridge regression on the active columns with `Sigma` taken at `beta`.
    fn ridge_step(
        &self,
        beta: &[f64],
        active: &[bool],
        params: &ScadParams,
        knot_weight: &[Option<f64>],
        banded: &mut Option<(Vec<bool>, BandedSystem)>,
    ) -> Result<Vec<f64>> {
        let cols = self.active_columns(active);
        let ridge = self.ridge_diagonal(&cols, beta, params, knot_weight);
        let solved = match self.banded_for(active, banded) {
            Some(sys) => sys.solve(&ridge[self.unpenalized.len()..])?,
            None => self.dense_solve(&cols, &ridge)?,
        };
        let mut next = vec![0.0; beta.len()];
        for (&c, v) in cols.iter().zip(solved) {
            next[c] = v;
        }
        Ok(next)
    }

    /// Banded B-spline system for the current active set, rebuilt only when
    /// the set changes. `None` for designs without a spline layout.
    fn banded_for<'s>(
        &self,
        active: &[bool],
        cache: &'s mut Option<(Vec<bool>, BandedSystem)>,
    ) -> Option<&'s BandedSystem> {
        let layout = self.design.spline_layout().filter(|l| l.basis.order() >= 2)?;
        if cache.as_ref().is_none_or(|(set, _)| set != active) {
            let positions: Vec<usize> = (0..active.len()).filter(|&j| active[j]).collect();
            *cache = Some((active.to_vec(), BandedSystem::new(layout, &self.y, &positions)));
        }
        cache.as_ref().map(|(_, sys)| sys)
    }

    fn dense_solve(&self, cols: &[usize], ridge: &[f64]) -> Result<Vec<f64>> {
        let mut system = self.gram.select_rows(cols).select_columns(cols);
        for (i, r) in ridge.iter().enumerate() {
            system[(i, i)] += r;
        }
        let rhs = DMatrix::from_iterator(cols.len(), 1, cols.iter().map(|&c| self.xty[c]));
        Ok(linalg::solve_psd(&system, &rhs)?.as_slice().to_vec())
    }

    fn clamp(&self, beta: &mut [f64], active: &mut [bool], weights: &[f64], config: &FitConfig) {
        let scale = self
            .knot_cols
            .iter()
            .zip(weights)
            .zip(active.iter())
            .filter(|(_, &a)| a)
            .map(|((&c, &w), _)| (w * beta[c]).abs())
            .fold(1.0f64, f64::max);
        let cutoff = config.zero_clamp * scale;
        for (pos, (&c, &w)) in self.knot_cols.iter().zip(weights).enumerate() {
            if active[pos] && (w * beta[c]).abs() < cutoff {
                active[pos] = false;
                beta[c] = 0.0;
            }
        }
    }
}

/// Minimizes the SCAD-penalized least-squares criterion by LQA.
///
/// `start` defaults to the minimum-norm least-squares fit. With
/// `lambda = 0` the least-squares fit is returned directly with every knot
/// kept, whatever `start` is.
pub fn lqa_fit(
    x: &DesignMatrix,
    y: &[f64],
    params: &ScadParams,
    weights: &[f64],
    config: &FitConfig,
    start: Option<&[f64]>,
) -> Result<PenalizedFit> {
    config.validate()?;
    check_weights(x, weights)?;
    if let Some(s) = start {
        if s.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "start has {} coefficients for {} columns",
                s.len(),
                x.ncols()
            )));
        }
    }
    let problem = Problem::new(x, y)?;
    if params.lambda() == 0.0 {
        let (ls, _) = problem.least_squares(config)?;
        return Ok(problem.unpenalized_fit(&ls, weights, *params));
    }
    match start {
        Some(s) => problem.fit(*params, weights, config, s),
        None => {
            let (ls, _) = problem.least_squares(config)?;
            problem.fit(*params, weights, config, &ls.coefficients)
        }
    }
}

/// A fitted univariate spline: its basis plus the penalized fit.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineModel {
    pub basis: BasisSpec,
    pub fit: PenalizedFit,
}

/// Flat JSON layout of a [`SplineModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineModelJson {
    pub order: usize,
    pub knots: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub active_knots: Vec<usize>,
    pub lambda: f64,
    pub a: f64,
    pub iterations: usize,
    pub effective_params: f64,
    pub rss: f64,
}

impl SplineModel {
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::basis::predict(&self.fit.coefficients, &self.basis, x)
    }

    pub fn to_json_value(&self) -> SplineModelJson {
        SplineModelJson {
            order: self.basis.order(),
            knots: self.basis.knots().to_vec(),
            coefficients: self.fit.coefficients.clone(),
            active_knots: self.fit.active_knots.clone(),
            lambda: self.fit.lambda(),
            a: self.fit.params.a(),
            iterations: self.fit.iterations,
            effective_params: self.fit.effective_params,
            rss: self.fit.residual_sum_squares,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("model serializes")
    }
}

impl SplineModelJson {
    /// Basis and coefficients, validated against each other.
    pub fn basis_and_coefficients(&self) -> Result<(BasisSpec, &[f64])> {
        let basis = BasisSpec::new(self.order, self.knots.clone())?;
        if self.coefficients.len() != basis.dim() {
            return Err(Error::Dimension(format!(
                "{} coefficients for a basis of dimension {}",
                self.coefficients.len(),
                basis.dim()
            )));
        }
        Ok((basis, &self.coefficients))
    }

    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (basis, coeffs) = self.basis_and_coefficients()?;
        crate::basis::predict(coeffs, &basis, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{design_matrix, ColumnRole};
    use approx::assert_abs_diff_eq;

    fn identity_design(n: usize, scale: f64, unpenalized: usize) -> DesignMatrix {
        let values = DMatrix::identity(n, n) * scale;
        let roles = (0..n)
            .map(|j| {
                if j < unpenalized {
                    ColumnRole::Power { component: 0, power: j + 1 }
                } else {
                    ColumnRole::Knot { component: 0, index: j - unpenalized }
                }
            })
            .collect();
        DesignMatrix::from_parts(values, roles).unwrap()
    }

    #[test]
    fn unit_weights_for_scaled_identity() {
        let n = 6;
        let d = identity_design(n, (n as f64).sqrt(), 1);
        let w = penalty_weights(&d).unwrap();
        assert_eq!(w.weights.len(), 5);
        for v in w.weights {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn weight_scales_with_column() {
        let spec = BasisSpec::new(2, vec![0.3, 0.6]).unwrap();
        let x: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
        let d = design_matrix(&x, &spec);
        let base = penalty_weights(&d).unwrap().weights;
        let mut scaled = d.values().clone();
        scaled.column_mut(3).scale_mut(5.0);
        let d2 = DesignMatrix::from_parts(scaled, d.roles().to_vec()).unwrap();
        let w2 = penalty_weights(&d2).unwrap().weights;
        assert_abs_diff_eq!(w2[1], 5.0 * base[1], epsilon = 1e-9 * base[1]);
        assert_abs_diff_eq!(w2[0], base[0], epsilon = 1e-9 * base[0]);
    }

    #[test]
    fn duplicated_column_gives_finite_weights() {
        let spec = BasisSpec::new(2, vec![0.5]).unwrap();
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let d = design_matrix(&x, &spec);
        let dup = d.values().clone().insert_column(3, 0.0);
        let mut dup = dup;
        let knot = d.values().column(2).clone_owned();
        dup.set_column(3, &knot);
        let mut roles = d.roles().to_vec();
        roles.push(ColumnRole::Knot { component: 0, index: 1 });
        let d = DesignMatrix::from_parts(dup, roles).unwrap();
        let w = penalty_weights(&d).unwrap();
        assert_eq!(w.weights.len(), 2);
        assert!(w.weights.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn zero_column_is_degenerate() {
        let spec = BasisSpec::new(2, vec![0.5, 2.0]).unwrap();
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let d = design_matrix(&x, &spec);
        let w = penalty_weights(&d).unwrap();
        assert_eq!(w.degenerate, vec![1]);
        assert_eq!(w.weights[1], 0.0);
        let y: Vec<f64> = x.iter().map(|v| v * v).collect();
        let fit = lqa_fit(&d, &y, &ScadParams::with_lambda(0.01).unwrap(), &w.weights, &FitConfig::default(), None)
            .unwrap();
        assert!(!fit.active_knots.contains(&1));
        assert_eq!(fit.coefficients[3], 0.0);
    }

    #[test]
    fn weights_reject_empty_design() {
        let d = DesignMatrix::from_parts(DMatrix::zeros(3, 0), vec![]).unwrap();
        assert!(penalty_weights(&d).is_err());
    }

    #[test]
    fn initial_coefficients_identity_and_consistent() {
        let d = identity_design(4, 1.0, 1);
        let y = [1.0, -2.0, 3.5, 0.25];
        let b = initial_coefficients(&d, &y, &FitConfig::default()).unwrap();
        assert_abs_diff_eq!(b.as_slice(), y.as_slice(), epsilon = 1e-14);

        let spec = BasisSpec::new(3, vec![0.25, 0.5, 0.75]).unwrap();
        let x: Vec<f64> = (0..50).map(|i| (i as f64 + 0.5) / 50.0).collect();
        let truth = [0.3, -1.0, 2.0, 4.0, -3.0, 5.0];
        let y = crate::basis::predict(&truth, &spec, &x).unwrap();
        let d = design_matrix(&x, &spec);
        let b = initial_coefficients(&d, &y, &FitConfig::default()).unwrap();
        let fitted = crate::basis::predict(&b, &spec, &x).unwrap();
        for (f, t) in fitted.iter().zip(&y) {
            assert_abs_diff_eq!(f, t, epsilon = 1e-8);
        }
        assert!(initial_coefficients(&d, &y[..10], &FitConfig::default()).is_err());
    }

    #[test]
    fn duplicated_column_least_squares_residual() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v).sin()).collect();
        let full = DMatrix::from_fn(20, 3, |i, j| x[i].powi(j as i32));
        let dup = DMatrix::from_fn(20, 4, |i, j| x[i].powi(j.min(2) as i32));
        let roles = |m: usize| (0..m).map(|j| ColumnRole::Power { component: 0, power: j }).collect();
        let d_full = DesignMatrix::from_parts(full, roles(3)).unwrap();
        let d_dup = DesignMatrix::from_parts(dup, roles(4)).unwrap();
        let cfg = FitConfig::default();
        let b_full = initial_coefficients(&d_full, &y, &cfg).unwrap();
        let b_dup = initial_coefficients(&d_dup, &y, &cfg).unwrap();
        let r_full = residual_sum_squares(d_full.values(), &y, &b_full);
        let r_dup = residual_sum_squares(d_dup.values(), &y, &b_dup);
        assert_abs_diff_eq!(r_full, r_dup, epsilon = 1e-12);
        // minimum norm splits the duplicated coefficient evenly
        assert_abs_diff_eq!(b_dup[2], b_dup[3], epsilon = 1e-10);
    }

    #[test]
    fn objective_examples() {
        let spec = BasisSpec::new(2, vec![0.5]).unwrap();
        let x = [0.0, 0.25, 0.75, 1.0];
        let y = [1.0, 0.5, 0.0, 2.0];
        let d = design_matrix(&x, &spec);
        let params = ScadParams::with_lambda(0.3).unwrap();
        let w = [2.0];
        let zero = objective(&[0.0; 3], &d, &y, &params, &w).unwrap();
        assert_abs_diff_eq!(zero, 1.0 + 0.25 + 0.0 + 4.0, epsilon = 1e-14);

        let beta = [1.0, -1.0, 0.2];
        let no_pen = objective(&beta, &d, &y, &ScadParams::default(), &w).unwrap();
        // fitted: 1, 0.75, 0.25 + 0.05, 0 + 0.1
        let rss = 0.0 + 0.0625 + 0.09 + 3.61;
        assert_abs_diff_eq!(no_pen, rss, epsilon = 1e-12);
        // |w b| = 0.4 lies in the middle branch for lambda = 0.3
        let pen = -(0.16 - 2.0 * 3.7 * 0.3 * 0.4 + 0.09) / (2.0 * 2.7);
        let val = objective(&beta, &d, &y, &params, &w).unwrap();
        assert_abs_diff_eq!(val, rss + 4.0 * pen, epsilon = 1e-12);
        assert!(objective(&beta[..2], &d, &y, &params, &w).is_err());
    }

    #[test]
    fn zero_lambda_is_least_squares() {
        let spec = BasisSpec::new(3, vec![0.3, 0.6]).unwrap();
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (5.0 * v).cos()).collect();
        let d = design_matrix(&x, &spec);
        let w = penalty_weights(&d).unwrap().weights;
        let cfg = FitConfig::default();
        let fit = lqa_fit(&d, &y, &ScadParams::default(), &w, &cfg, None).unwrap();
        let ls = initial_coefficients(&d, &y, &cfg).unwrap();
        assert_eq!(fit.coefficients, ls);
        assert_eq!(fit.active_knots, vec![0, 1]);
        assert_abs_diff_eq!(fit.objective, fit.residual_sum_squares, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.effective_params, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_consistency_of_unpenalized_fit() {
        let spec = BasisSpec::new(3, vec![0.3, 0.6]).unwrap();
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (5.0 * v).cos()).collect();
        let y3: Vec<f64> = y.iter().map(|v| 3.0 * v).collect();
        let d = design_matrix(&x, &spec);
        let w = penalty_weights(&d).unwrap().weights;
        let cfg = FitConfig::default();
        let a = lqa_fit(&d, &y, &ScadParams::default(), &w, &cfg, None).unwrap();
        let b = lqa_fit(&d, &y3, &ScadParams::default(), &w, &cfg, None).unwrap();
        for (u, v) in a.coefficients.iter().zip(&b.coefficients) {
            assert_abs_diff_eq!(3.0 * u, v, epsilon = 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.max_iterations = 0;
        assert!(cfg.validate().is_err());
        let cfg = FitConfig { zero_clamp: 0.0, ..FitConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let spec = BasisSpec::new(3, vec![0.3, 0.6]).unwrap();
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 29.0).collect();
        let y: Vec<f64> = x.iter().map(|v| (5.0 * v).cos()).collect();
        let d = design_matrix(&x, &spec);
        let w = penalty_weights(&d).unwrap().weights;
        let fit = lqa_fit(&d, &y, &ScadParams::with_lambda(0.05).unwrap(), &w, &FitConfig::default(), None)
            .unwrap();
        let model = SplineModel { basis: spec, fit };
        let text = model.to_json();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        for key in ["order", "knots", "coefficients", "active_knots", "lambda", "a", "iterations", "effective_params", "rss"] {
            assert!(value.get(key).is_some(), "missing {key}");
        }
        let back: SplineModelJson = serde_json::from_str(&text).unwrap();
        let pts = [0.1, 0.35, 0.77, 0.99];
        assert_eq!(back.predict(&pts).unwrap(), model.predict(&pts).unwrap());
    }
}
