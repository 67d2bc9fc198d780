//! Additive models `y = b_0 + f_1(x_1) + ... + f_J(x_J) + e`.
//!
//! Each component gets its own truncated power basis without a constant
//! column. The blocks are stacked next to one shared intercept and every
//! knot column is penalized under one global `lambda`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::{self, design_matrix, min_initial_knots, place_knots, BasisSpec, ColumnRole, DesignMatrix};
use crate::error::{Error, Result};
use crate::penalty::ScadParams;
use crate::selection::{self, select_lambda, SelectionOptions, SelectionResult};
use crate::solver::{lqa_fit, penalty_weights, PenalizedFit};

/// Per-variable bases of an additive model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveSpec {
    pub components: Vec<BasisSpec>,
}

impl AdditiveSpec {
    pub fn new(components: Vec<BasisSpec>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Domain("an additive model needs at least one component".into()));
        }
        Ok(Self { components })
    }

    /// Knots at order statistics of each column, with the count given by
    /// [`min_initial_knots`] per variable.
    pub fn auto(data: &DMatrix<f64>, order: usize, alpha: f64, divisor: f64) -> Result<Self> {
        let n = data.nrows();
        let k = min_initial_knots(n, alpha, divisor)?;
        let components = (0..data.ncols())
            .map(|j| {
                let col: Vec<f64> = data.column(j).iter().copied().collect();
                BasisSpec::new(order, place_knots(&col, k)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    /// Same knot count `k` for every variable.
    pub fn with_knot_count(data: &DMatrix<f64>, order: usize, k: usize) -> Result<Self> {
        let components = (0..data.ncols())
            .map(|j| {
                let col: Vec<f64> = data.column(j).iter().copied().collect();
                BasisSpec::new(order, place_knots(&col, k)?)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(components)
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    /// Total number of design columns.
    pub fn dim(&self) -> usize {
        1 + self.components.iter().map(|b| b.dim() - 1).sum::<usize>()
    }
}

/// Columns `[1 | block_1 | ... | block_J]` with
/// `block_j = [x_j, ..., x_j^{p_j - 1}, knot columns of x_j]`.
///
/// A single component gives exactly [`design_matrix`].
pub fn additive_design(data: &DMatrix<f64>, spec: &AdditiveSpec) -> Result<DesignMatrix> {
    if data.ncols() != spec.num_components() {
        return Err(Error::Dimension(format!(
            "{} covariate columns for {} components",
            data.ncols(),
            spec.num_components()
        )));
    }
    if data.nrows() == 0 {
        return Err(Error::Dimension("no observations".into()));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("covariates must be finite".into()));
    }
    let column = |j: usize| -> Vec<f64> { data.column(j).iter().copied().collect() };
    if spec.num_components() == 1 {
        return Ok(design_matrix(&column(0), &spec.components[0]));
    }
    let n = data.nrows();
    let mut values = DMatrix::zeros(n, spec.dim());
    let mut roles = vec![ColumnRole::Intercept];
    values.column_mut(0).fill(1.0);
    let mut at = 1;
    for (j, b) in spec.components.iter().enumerate() {
        let block = design_matrix(&column(j), b);
        let width = b.dim() - 1;
        values.columns_mut(at, width).copy_from(&block.values().columns(1, width));
        roles.extend(block.roles()[1..].iter().map(|r| match *r {
            ColumnRole::Power { power, .. } => ColumnRole::Power { component: j, power },
            ColumnRole::Knot { index, .. } => ColumnRole::Knot { component: j, index },
            ColumnRole::Intercept => unreachable!("component blocks carry no intercept"),
        }));
        at += width;
    }
    DesignMatrix::from_parts(values, roles)
}

/// How `lambda` is chosen for an additive fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Tuning {
    /// Use this value.
    Fixed { lambda: f64 },
    /// Search the default grid with this many positive values.
    Grid { size: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditiveOptions {
    pub a: f64,
    pub tuning: Tuning,
    pub selection: SelectionOptions,
}

impl Default for AdditiveOptions {
    fn default() -> Self {
        Self {
            a: crate::penalty::DEFAULT_A,
            tuning: Tuning::Grid {
                size: selection::DEFAULT_GRID_SIZE,
            },
            selection: SelectionOptions::default(),
        }
    }
}

/// One fitted component, centered over the sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentFit {
    pub basis: BasisSpec,
    /// Power then knot coefficients of the raw component (no constant).
    pub coefficients: Vec<f64>,
    /// Indices of the surviving knots of this component.
    pub active_knots: Vec<usize>,
    /// Sample mean of the raw component, moved into the intercept.
    pub mean: f64,
    /// Centered component values at the sample points.
    pub centered: Vec<f64>,
}

impl ComponentFit {
    /// Centered component at new points.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut coeffs = Vec::with_capacity(self.coefficients.len() + 1);
        coeffs.push(0.0);
        coeffs.extend_from_slice(&self.coefficients);
        Ok(basis::predict(&coeffs, &self.basis, x)?
            .into_iter()
            .map(|v| v - self.mean)
            .collect())
    }
}

/// Fitted additive model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdditiveFit {
    /// Intercept after the component means have been absorbed.
    pub intercept: f64,
    pub components: Vec<ComponentFit>,
    /// Fit on the stacked design, before centering.
    pub fit: PenalizedFit,
    /// Grid search, when `lambda` was selected.
    pub selection: Option<SelectionResult>,
}

/// JSON layout of an [`AdditiveFit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdditiveFitJson {
    pub intercept: f64,
    pub lambda: f64,
    pub a: f64,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
    pub effective_params: f64,
    pub rss: f64,
    pub components: Vec<ComponentFit>,
}

impl AdditiveFit {
    /// Intercept plus centered components at the sample points.
    pub fn fitted_values(&self) -> Vec<f64> {
        let n = self.components.first().map_or(0, |c| c.centered.len());
        (0..n)
            .map(|i| self.intercept + self.components.iter().map(|c| c.centered[i]).sum::<f64>())
            .collect()
    }

    pub fn to_json_value(&self) -> AdditiveFitJson {
        AdditiveFitJson {
            intercept: self.intercept,
            lambda: self.fit.lambda(),
            a: self.fit.params.a(),
            iterations: self.fit.iterations,
            converged: self.fit.converged,
            objective: self.fit.objective,
            effective_params: self.fit.effective_params,
            rss: self.fit.residual_sum_squares,
            components: self.components.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("additive fit serializes")
    }

    pub fn predict(&self, data: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_components(self.intercept, &self.components, data)
    }
}

impl AdditiveFitJson {
    pub fn predict(&self, data: &DMatrix<f64>) -> Result<Vec<f64>> {
        predict_components(self.intercept, &self.components, data)
    }
}

fn predict_components(intercept: f64, components: &[ComponentFit], data: &DMatrix<f64>) -> Result<Vec<f64>> {
    if data.ncols() != components.len() {
        return Err(Error::Dimension(format!(
            "{} covariate columns for {} components",
            data.ncols(),
            components.len()
        )));
    }
    let mut out = vec![intercept; data.nrows()];
    for (j, c) in components.iter().enumerate() {
        let col: Vec<f64> = data.column(j).iter().copied().collect();
        for (o, v) in out.iter_mut().zip(c.evaluate(&col)?) {
            *o += v;
        }
    }
    Ok(out)
}

/// Fits the stacked model, then centers each component over the sample.
pub fn fit_additive(
    data: &DMatrix<f64>,
    y: &[f64],
    spec: &AdditiveSpec,
    options: &AdditiveOptions,
) -> Result<AdditiveFit> {
    let design = additive_design(data, spec)?;
    let weights = penalty_weights(&design)?.weights;
    let (fit, selection) = match options.tuning {
        Tuning::Fixed { lambda } => {
            let params = ScadParams::new(lambda, options.a)?;
            (lqa_fit(&design, y, &params, &weights, &options.selection.config, None)?, None)
        }
        Tuning::Grid { size } => {
            let grid = selection::lambda_grid(&design, y, &weights, size)?;
            let template = ScadParams::new(0.0, options.a)?;
            let result = select_lambda(&design, y, &weights, &template, &grid, &options.selection)?;
            (result.best_fit.clone(), Some(result))
        }
    };
    let (intercept, components) = split_components(&design, spec, &fit)?;
    Ok(AdditiveFit {
        intercept,
        components,
        fit,
        selection,
    })
}

fn split_components(
    design: &DesignMatrix,
    spec: &AdditiveSpec,
    fit: &PenalizedFit,
) -> Result<(f64, Vec<ComponentFit>)> {
    let n = design.nrows();
    let beta = &fit.coefficients;
    let mut intercept = 0.0;
    let mut blocks: Vec<Vec<usize>> = vec![Vec::new(); spec.num_components()];
    for (col, role) in design.roles().iter().enumerate() {
        match *role {
            ColumnRole::Intercept => intercept += beta[col],
            ColumnRole::Power { component, .. } | ColumnRole::Knot { component, .. } => {
                blocks[component].push(col)
            }
        }
    }
    let penalized = design.penalized_columns();
    let mut components = Vec::with_capacity(blocks.len());
    for (j, cols) in blocks.into_iter().enumerate() {
        let mut raw = vec![0.0; n];
        for &c in &cols {
            for (r, v) in raw.iter_mut().zip(design.values().column(c).iter()) {
                *r += beta[c] * v;
            }
        }
        let mean = raw.iter().sum::<f64>() / n as f64;
        intercept += mean;
        let active_knots = fit
            .active_knots
            .iter()
            .filter_map(|&pos| match design.roles()[penalized[pos]] {
                ColumnRole::Knot { component, index } if component == j => Some(index),
                _ => None,
            })
            .collect();
        components.push(ComponentFit {
            basis: spec.components[j].clone(),
            coefficients: cols.iter().map(|&c| beta[c]).collect(),
            active_knots,
            mean,
            centered: raw.iter().map(|r| r - mean).collect(),
        });
    }
    Ok((intercept, components))
}
