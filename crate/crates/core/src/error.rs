use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Dimensions of two inputs do not agree.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The input is in the wrong state for this operation (e.g. unstandardized genotypes).
    #[error("invalid state: {0}")]
    State(String),

    #[error("matrix is not positive semi-definite: smallest eigenvalue {min_eigenvalue:e} below tolerance {tolerance:e}")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    /// Correlation of a zero-norm vector.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("infeasible effect model: target correlation {target} exceeds the overlap bound {bound}")]
    Infeasible { target: f64, bound: f64 },

    #[error("numerical inconsistency: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error in {path}: {msg}")]
    Data { path: PathBuf, msg: String },

    #[error("refusing to run: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn data(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Data {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
