//! The SCAD penalty and its scalar thresholding rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default SCAD shape parameter.
pub const DEFAULT_A: f64 = 3.7;

/// A penalty `p(theta)` on a non-negative magnitude, with its derivative.
///
/// The solver only needs these two evaluations; both are called with
/// `theta >= 0`.
pub trait Penalty {
    fn value(&self, theta: f64) -> f64;
    fn derivative(&self, theta: f64) -> f64;
}

/// SCAD penalty level `lambda >= 0` and shape `a > 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScadParams {
    lambda: f64,
    a: f64,
}

impl Default for ScadParams {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            a: DEFAULT_A,
        }
    }
}

impl ScadParams {
    pub fn new(lambda: f64, a: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Domain(format!("lambda = {lambda} must be finite and >= 0")));
        }
        if !(a > 2.0 && a.is_finite()) {
            return Err(Error::Domain(format!("SCAD shape a = {a} must exceed 2")));
        }
        Ok(Self { lambda, a })
    }

    /// SCAD with the default shape `a = 3.7`.
    pub fn with_lambda(lambda: f64) -> Result<Self> {
        Self::new(lambda, DEFAULT_A)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Same shape, different level.
    pub fn at_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(lambda, self.a)
    }
}

impl Penalty for ScadParams {
    fn value(&self, theta: f64) -> f64 {
        let (lam, a) = (self.lambda, self.a);
        if theta <= lam {
            lam * theta
        } else if theta <= a * lam {
            -(theta * theta - 2.0 * a * lam * theta + lam * lam) / (2.0 * (a - 1.0))
        } else {
            (a + 1.0) * lam * lam / 2.0
        }
    }

    fn derivative(&self, theta: f64) -> f64 {
        let (lam, a) = (self.lambda, self.a);
        if theta <= lam {
            lam
        } else {
            (a * lam - theta).max(0.0) / (a - 1.0)
        }
    }
}

fn check_magnitude(theta: f64) -> Result<()> {
    if theta >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("penalty argument {theta} must be >= 0")))
    }
}

/// `p'_lambda(theta)`; at `theta = 0` this is the right limit `lambda`.
pub fn scad_derivative(theta: f64, params: &ScadParams) -> Result<f64> {
    check_magnitude(theta)?;
    Ok(params.derivative(theta))
}

/// `p_lambda(theta)` with `p_lambda(0) = 0`.
pub fn scad_value(theta: f64, params: &ScadParams) -> Result<f64> {
    check_magnitude(theta)?;
    Ok(params.value(theta))
}

/// Minimizer of `(z - theta)^2 / 2 + p_lambda(|theta|)`.
pub fn scad_threshold(z: f64, params: &ScadParams) -> f64 {
    let (lam, a) = (params.lambda, params.a);
    let abs = z.abs();
    if abs <= 2.0 * lam {
        z.signum() * (abs - lam).max(0.0)
    } else if abs <= a * lam {
        ((a - 1.0) * z - z.signum() * a * lam) / (a - 2.0)
    } else {
        z
    }
}
