use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CsfError>;

#[derive(Debug, Error)]
pub enum CsfError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("selection error: {0}")]
    Selection(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("prediction undefined for row {row}: {reason}")]
    UndefinedPrediction { row: usize, reason: String },

    #[error("linear algebra error: {0}")]
    LinearAlgebra(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("fingerprint mismatch: {0}")]
    Fingerprint(String),
}

impl CsfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CsfError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        CsfError::Parameter(msg.into())
    }
}
