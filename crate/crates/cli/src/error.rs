use std::path::PathBuf;

use csf_core::CsfError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CsfError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("network error: {0}")]
    Network(String),

    #[error("integrity error: {0}")]
    Integrity(String),
}

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad flags; also what clap uses for argument errors.
    pub const USAGE: i32 = 2;
    pub const IO: i32 = 3;
    /// Malformed input: schema, parse, empty data, empty selection.
    pub const DATA: i32 = 4;
    pub const PARAMETER: i32 = 5;
    /// Fitting or estimation failed numerically.
    pub const ESTIMATION: i32 = 6;
    /// Model file unreadable or incompatible.
    pub const MODEL: i32 = 7;
    /// Data does not match the model's training fingerprint.
    pub const FINGERPRINT: i32 = 8;
    pub const NETWORK: i32 = 9;
    /// Downloaded content failed verification.
    pub const INTEGRITY: i32 = 10;
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                CsfError::Io { .. } => exit::IO,
                CsfError::Input(_) | CsfError::Schema(_) | CsfError::Parse { .. } | CsfError::Selection(_) => exit::DATA,
                CsfError::Parameter(_) => exit::PARAMETER,
                CsfError::Fit(_) | CsfError::UndefinedPrediction { .. } | CsfError::LinearAlgebra(_) => exit::ESTIMATION,
                CsfError::Model(_) => exit::MODEL,
                CsfError::Fingerprint(_) => exit::FINGERPRINT,
            },
            CliError::Io { .. } => exit::IO,
            CliError::Usage(_) => exit::USAGE,
            CliError::Network(_) => exit::NETWORK,
            CliError::Integrity(_) => exit::INTEGRITY,
        }
    }
}
