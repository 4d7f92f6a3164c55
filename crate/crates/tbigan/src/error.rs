//! Crate-wide error type and result alias.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
///
/// Variants map onto the CLI exit codes: configuration/usage problems exit
/// with 1, data problems with 2, numerical failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// API contract violation (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Malformed or unusable input data.
    #[error("data error: {0}")]
    Data(String),

    /// An operation produced NaN or Inf.
    #[error("non-finite values produced by {op}{}", context.as_deref().map(|c| format!(" ({c})")).unwrap_or_default())]
    NonFinite {
        op: &'static str,
        context: Option<String>,
    },

    /// Numerical failure during training or scoring (divergence, NaN loss).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml parse error: {0}")]
    TomlDe(#[from] toml::de::Error),

    #[error("toml encode error: {0}")]
    TomlSer(#[from] toml::ser::Error),
}

impl Error {
    /// Process exit code for this error class: 1 usage/config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Contract(_) | Error::ShapeMismatch { .. } => 1,
            Error::Data(_) | Error::Csv(_) | Error::Io(_) | Error::Json(_) => 2,
            Error::TomlDe(_) | Error::TomlSer(_) => 1,
            Error::NonFinite { .. } | Error::Numerical(_) => 3,
        }
    }

    pub(crate) fn non_finite(op: &'static str) -> Self {
        Error::NonFinite { op, context: None }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
