use thiserror::Error;

/// Errors produced by the fitting library.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// The data cannot support the requested operation.
    #[error("invalid data: {0}")]
    InvalidData(String),
    /// A linear system could not be solved even through the pseudo-inverse.
    #[error("singular system: {0}")]
    Singular(String),
    /// No grid point produced a usable score.
    #[error("selection failed: {0}")]
    Selection(String),
}

pub type Result<T> = std::result::Result<T, Error>;
