//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Every mode of the Hessian was discarded as a zero mode; nothing is
    /// left to invert and the corresponding lambda point must be reported
    /// as failed.
    #[error("degenerate Hessian: all modes removed")]
    DegenerateHessian,

    #[error("fixed-point iteration failed: {0}")]
    FixedPoint(String),

    #[error("linear algebra failure: {0}")]
    Linalg(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("report error: {0}")]
    Report(String),
}

impl From<ndarray_linalg::error::LinalgError> for Error {
    fn from(e: ndarray_linalg::error::LinalgError) -> Self {
        Error::Linalg(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
