use std::io;

use thiserror::Error;

/// Errors raised by the filter, the analytical model and the experiment drivers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("ill-conditioned matrix: condition number {condition:.3e} exceeds {limit:.1e}")]
    IllConditioned { condition: f64, limit: f64 },

    #[error("non-finite weights at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("filter diverged in run {run} at iteration {iteration}")]
    RunDiverged { run: usize, iteration: usize },

    #[error("covariance recursion diverged at step {step} (trace {trace:.3e})")]
    Diverged { step: usize, trace: f64 },

    #[error("model is not mean-square stable (spectral radius {spectral_radius:.12})")]
    Unstable { spectral_radius: f64 },

    #[error("horizon mismatch: {left} vs {right}")]
    HorizonMismatch { left: usize, right: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
