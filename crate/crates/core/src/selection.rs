//! Choosing the penalty level: effective parameters, MGCV and PREC scores,
//! and the search over a grid of `lambda` values.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::DesignMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::penalty::ScadParams;
use crate::solver::{residual_sum_squares, FitConfig, PenalizedFit, Problem};

/// Number of log-spaced positive grid values used when no grid is given.
pub const DEFAULT_GRID_SIZE: usize = 40;
/// Ratio between the smallest and largest values of a [`log_grid`].
pub const DEFAULT_GRID_SPAN: f64 = 1e-4;
/// Bottom of the default grid in units of the coefficient noise scale.
pub const GRID_LOW: f64 = 0.1;
/// Top of the default grid in units of the coefficient noise scale.
pub const GRID_HIGH: f64 = 1000.0;
/// Overshoot applied to the computed `lambda_max`.
pub const LAMBDA_MAX_INFLATION: f64 = 1.05;

/// Model-selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Generalized cross-validation with an inflated parameter count.
    Mgcv,
    /// Cp-style predictive risk estimate.
    Prec,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mgcv" => Ok(Self::Mgcv),
            "prec" => Ok(Self::Prec),
            other => Err(Error::Domain(format!("unknown criterion '{other}'"))),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mgcv => "mgcv",
            Self::Prec => "prec",
        })
    }
}

/// Inflation factor: a constant or a function of `n` or the knot count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum GammaSpec {
    Constant(f64),
    LnNOver2,
    LnN,
    LnKOver2,
    LnK,
}

impl GammaSpec {
    pub fn constant(value: f64) -> Result<Self> {
        if value >= 1.0 && value.is_finite() {
            Ok(Self::Constant(value))
        } else {
            Err(Error::Domain(format!("constant inflation factor {value} must be >= 1")))
        }
    }
}

impl FromStr for GammaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect::<String>()
            .to_ascii_lowercase()
            .replace("log", "ln");
        match key.as_str() {
            "ln(n)/2" | "ln_n_over_2" => Ok(Self::LnNOver2),
            "ln(n)" | "ln_n" => Ok(Self::LnN),
            "ln(k)/2" | "ln_k_over_2" => Ok(Self::LnKOver2),
            "ln(k)" | "ln_k" => Ok(Self::LnK),
            other => other
                .parse::<f64>()
                .map_err(|_| Error::Domain(format!("cannot parse inflation factor '{s}'")))
                .and_then(Self::constant),
        }
    }
}

impl fmt::Display for GammaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "{v}"),
            Self::LnNOver2 => f.write_str("ln(n)/2"),
            Self::LnN => f.write_str("ln(n)"),
            Self::LnKOver2 => f.write_str("ln(k)/2"),
            Self::LnK => f.write_str("ln(k)"),
        }
    }
}

/// Numeric inflation factor for sample size `n` and `k` initial knots.
pub fn resolve_gamma(spec: GammaSpec, n: usize, k: usize) -> f64 {
    match spec {
        GammaSpec::Constant(v) => v,
        GammaSpec::LnNOver2 => (n as f64).ln() / 2.0,
        GammaSpec::LnN => (n as f64).ln(),
        GammaSpec::LnKOver2 => (k as f64).ln() / 2.0,
        GammaSpec::LnK => (k as f64).ln(),
    }
}

/// Trace of `X (X^T X + n S)^{-1} X^T`, computed as `tr[(X^T X + n S)^{-1} X^T X]`.
///
/// `sigma` is the diagonal of `S`, one entry per column of `x_active`.
pub fn effective_params(x_active: &DMatrix<f64>, sigma: &[f64]) -> Result<f64> {
    if sigma.len() != x_active.ncols() {
        return Err(Error::Dimension(format!(
            "{} diagonal entries for {} columns",
            sigma.len(),
            x_active.ncols()
        )));
    }
    if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
        return Err(Error::Domain("ridge diagonal must be finite and >= 0".into()));
    }
    let n = x_active.nrows() as f64;
    let gram = x_active.tr_mul(x_active);
    let ridge: Vec<f64> = sigma.iter().map(|s| n * s).collect();
    linalg::hat_trace(&gram, &ridge)
}

/// `(rss / n) / (1 - gamma e / n)^2`; `+inf` once `gamma e >= n`.
pub fn mgcv_score(rss: f64, n: usize, e: f64, gamma: f64) -> f64 {
    let n = n as f64;
    let denom = 1.0 - gamma * e / n;
    if denom <= 0.0 {
        return f64::INFINITY;
    }
    (rss / n) / (denom * denom)
}

/// `rss / n + 2 gamma sigma2 e / n`.
pub fn prec_score(rss: f64, n: usize, e: f64, gamma: f64, sigma2: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!("error variance {sigma2} must be positive")));
    }
    let n = n as f64;
    Ok(rss / n + 2.0 * gamma * sigma2 * e / n)
}

/// `1.05 * max_j |X_j^T r| / (w_j n)` over the penalized columns with a
/// positive weight, where `r` is the residual of the polynomial-only fit.
pub fn lambda_max(x: &DesignMatrix, y: &[f64], weights: &[f64]) -> Result<f64> {
    if y.len() != x.nrows() {
        return Err(Error::Dimension(format!("{} responses for {} rows", y.len(), x.nrows())));
    }
    if weights.len() != x.penalized_columns().len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} penalized columns",
            weights.len(),
            x.penalized_columns().len()
        )));
    }
    let values = x.values();
    let yv = DVector::from_column_slice(y);
    let free = x.unpenalized_columns();
    let resid = if free.is_empty() {
        yv
    } else {
        let xp = values.select_columns(&free);
        let beta = linalg::SvdFactor::new(&xp)?.min_norm_solve(&yv, 1e-12);
        &yv - xp * beta
    };
    let n = x.nrows() as f64;
    Ok(x
        .penalized_columns()
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&c, &w)| (values.column(c).dot(&resid) / w).abs() / n)
        .fold(0.0, f64::max)
        * LAMBDA_MAX_INFLATION)
}

/// `0` followed by `size` log-spaced values from `span * lambda_max` to `lambda_max`.
pub fn log_grid(lambda_max: f64, size: usize, span: f64) -> Vec<f64> {
    let mut grid = vec![0.0];
    if lambda_max > 0.0 && size > 0 {
        if size == 1 {
            grid.push(lambda_max);
        } else {
            let lo = (lambda_max * span).ln();
            let hi = lambda_max.ln();
            let step = (hi - lo) / (size - 1) as f64;
            grid.extend((0..size).map(|i| (lo + step * i as f64).exp()));
        }
    }
    grid
}

/// Noise scale `sigma_hat / sqrt(n)` of a standardized knot coefficient,
/// with `sigma_hat^2 = RSS / (n - rank)` from the unpenalized fit.
pub fn noise_scale(x: &DesignMatrix, y: &[f64]) -> Result<f64> {
    let problem = Problem::new(x, y)?;
    let (ls, _) = problem.least_squares(&FitConfig::default())?;
    let n = x.nrows();
    if n <= ls.rank {
        return Ok(0.0);
    }
    let rss = residual_sum_squares(x.values(), y, &ls.coefficients);
    Ok((rss / (n - ls.rank) as f64 / n as f64).sqrt())
}

/// `0`, then `size` log-spaced values from `GRID_LOW * s` to
/// `min(lambda_max, GRID_HIGH * s)` with `s` the [`noise_scale`], then
/// `lambda_max` itself when it lies above that range. Falls back to
/// [`log_grid`] when the noise scale is degenerate.
pub fn lambda_grid(x: &DesignMatrix, y: &[f64], weights: &[f64], size: usize) -> Result<Vec<f64>> {
    let top = lambda_max(x, y, weights)?;
    let s = noise_scale(x, y)?;
    let lo = GRID_LOW * s;
    let hi = top.min(GRID_HIGH * s);
    if !(s > 0.0 && lo < hi) || size < 2 {
        return Ok(log_grid(top, size, DEFAULT_GRID_SPAN));
    }
    let mut grid = vec![0.0];
    let (a, b) = (lo.ln(), hi.ln());
    let step = (b - a) / (size - 1) as f64;
    grid.extend((0..size).map(|i| (a + step * i as f64).exp()));
    if top > hi {
        grid.push(top);
    }
    Ok(grid)
}

/// [`lambda_grid`] with [`DEFAULT_GRID_SIZE`] points.
pub fn default_lambda_grid(x: &DesignMatrix, y: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    lambda_grid(x, y, weights, DEFAULT_GRID_SIZE)
}

/// How to run the grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOptions {
    pub criterion: Criterion,
    pub gamma: GammaSpec,
    /// Error variance for PREC; estimated from the unpenalized fit when absent.
    pub sigma2: Option<f64>,
    pub config: FitConfig,
    /// Fit grid points on the rayon pool instead of one after another.
    pub parallel: bool,
}

impl Default for SelectionOptions {
    fn default() -> Self {
        Self {
            criterion: Criterion::Mgcv,
            gamma: GammaSpec::Constant(2.5),
            sigma2: None,
            config: FitConfig::default(),
            parallel: false,
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub score: f64,
    pub effective_params: f64,
    pub active_knots: usize,
    pub rss: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the fit at this grid point failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub criterion: Criterion,
    pub gamma_resolved: f64,
    /// Error variance used by PREC.
    pub sigma2_used: Option<f64>,
    pub best_lambda: f64,
    pub best_index: usize,
    pub path: Vec<GridPoint>,
    pub best_fit: PenalizedFit,
}

impl SelectionResult {
    pub fn lambda_grid(&self) -> Vec<f64> {
        self.path.iter().map(|p| p.lambda).collect()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.path.iter().map(|p| p.score).collect()
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Domain("lambda grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::Domain("lambda grid values must be finite and >= 0".into()));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Domain("lambda grid must be sorted ascending".into()));
    }
    Ok(())
}

/// Fits every grid value of `lambda` and keeps the one with the lowest score.
///
/// Every grid point starts from the least-squares fit, so the sequential and
/// parallel modes produce identical paths. Equal scores go to the larger
/// `lambda`. A grid point whose fit fails is scored `+inf`.
pub fn select_lambda(
    x: &DesignMatrix,
    y: &[f64],
    weights: &[f64],
    params_template: &ScadParams,
    grid: &[f64],
    options: &SelectionOptions,
) -> Result<SelectionResult> {
    check_grid(grid)?;
    options.config.validate()?;
    if weights.len() != x.penalized_columns().len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} penalized columns",
            weights.len(),
            x.penalized_columns().len()
        )));
    }
    let n = x.nrows();
    let problem = Problem::new(x, y)?;
    let (ls, _) = problem.least_squares(&options.config)?;
    let k = weights.len();
    let gamma = resolve_gamma(options.gamma, n, k);

    let sigma2 = match options.criterion {
        Criterion::Mgcv => None,
        Criterion::Prec => Some(match options.sigma2 {
            Some(v) if v > 0.0 && v.is_finite() => v,
            Some(v) => return Err(Error::Domain(format!("error variance {v} must be positive"))),
            None => {
                let full = problem.unpenalized_fit(&ls, weights, *params_template);
                let dof = n as f64 - full.effective_params;
                if dof <= 0.0 {
                    return Err(Error::InvalidData(
                        "cannot estimate the error variance: the unpenalized fit interpolates".into(),
                    ));
                }
                full.residual_sum_squares / dof
            }
        }),
    };

    let fit_one = |lambda: f64| -> Result<PenalizedFit> {
        let params = params_template.at_lambda(lambda)?;
        if lambda == 0.0 {
            Ok(problem.unpenalized_fit(&ls, weights, params))
        } else {
            problem.fit(params, weights, &options.config, &ls.coefficients)
        }
    };
    let fits: Vec<Result<PenalizedFit>> = if options.parallel {
        grid.par_iter().map(|&l| fit_one(l)).collect()
    } else {
        grid.iter().map(|&l| fit_one(l)).collect()
    };

    let mut path = Vec::with_capacity(grid.len());
    let mut best: Option<(usize, f64)> = None;
    let mut kept: Vec<Option<PenalizedFit>> = Vec::with_capacity(grid.len());
    for (i, (fit, &lambda)) in fits.into_iter().zip(grid).enumerate() {
        match fit {
            Ok(fit) => {
                let score = match sigma2 {
                    None => mgcv_score(fit.residual_sum_squares, n, fit.effective_params, gamma),
                    Some(s2) => prec_score(fit.residual_sum_squares, n, fit.effective_params, gamma, s2)?,
                };
                let score = if score.is_nan() { f64::INFINITY } else { score };
                if score.is_finite() && best.is_none_or(|(_, b)| score <= b) {
                    best = Some((i, score));
                }
                path.push(GridPoint {
                    lambda,
                    score,
                    effective_params: fit.effective_params,
                    active_knots: fit.num_active_knots(),
                    rss: fit.residual_sum_squares,
                    iterations: fit.iterations,
                    converged: fit.converged,
                    error: None,
                });
                kept.push(Some(fit));
            }
            Err(err) => {
                log::warn!("fit at lambda = {lambda} failed: {err}");
                path.push(GridPoint {
                    lambda,
                    score: f64::INFINITY,
                    effective_params: f64::NAN,
                    active_knots: 0,
                    rss: f64::NAN,
                    iterations: 0,
                    converged: false,
                    error: Some(err.to_string()),
                });
                kept.push(None);
            }
        }
    }
    let (best_index, _) =
        best.ok_or_else(|| Error::Selection("no grid point produced a finite score".into()))?;
    let best_fit = kept[best_index].take().expect("best grid point has a fit");
    Ok(SelectionResult {
        criterion: options.criterion,
        gamma_resolved: gamma,
        sigma2_used: sigma2,
        best_lambda: grid[best_index],
        best_index,
        path,
        best_fit,
    })
}
