//! SCAD-penalized regression splines.
//!
//! A regression spline in the truncated power basis is fitted with a
//! non-convex SCAD penalty on the knot coefficients. Knots whose
//! coefficients are shrunk to zero are removed from the model, so fitting
//! and knot selection happen in one pass. The penalty level is chosen by a
//! modified GCV or a Cp-style risk criterion, each with an inflation factor.
//!
//! The crate also contains an additive-model extension and the simulation
//! harness used to benchmark the method on four standard test signals.

pub mod additive;
pub mod basis;
mod bspline;
pub mod cli;
pub mod error;
mod linalg;
pub mod penalty;
pub mod selection;
pub mod simulate;
pub mod solver;

pub use additive::{additive_design, fit_additive, AdditiveFit, AdditiveOptions, AdditiveSpec};
pub use basis::{design_matrix, place_knots, predict, BasisSpec, ColumnRole, DesignMatrix};
pub use error::{Error, Result};
pub use penalty::{scad_derivative, scad_threshold, scad_value, Penalty, ScadParams};
pub use solver::{lqa_fit, FitConfig, PenalizedFit, SplineModel};
pub use selection::{select_lambda, Criterion, GammaSpec, SelectionOptions, SelectionResult};
pub use simulate::{run_study, ExampleSpec, StudyConfig};
