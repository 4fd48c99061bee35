use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by failure class; the CLI maps them onto exit codes
/// (config/usage -> 1, numeric failures -> 2).
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("layer {layer}: expected input width {expected}, got {got}")]
    LayerShape {
        layer: String,
        expected: usize,
        got: usize,
    },

    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },

    #[error("parameter {name} already present")]
    DuplicateParam { name: String },

    #[error("parameter {name} not found")]
    MissingParam { name: String },

    #[error("NaN gradient for parameter {name}; step aborted")]
    NanGradient { name: String },

    #[error("non-finite value in {context}")]
    NumericFailure { context: String },

    #[error("{context}")]
    InvalidArgument { context: String },

    #[error("dataset error: {context}")]
    Dataset { context: String },

    #[error("{path}: {detail}{}", offset.map(|o| format!(" (at byte {o})")).unwrap_or_default())]
    Format {
        path: String,
        offset: Option<u64>,
        detail: String,
    },

    #[error("config error: {detail}")]
    Config { detail: String },

    #[error("{context}: no convergence after {iterations} iterations")]
    Convergence { context: String, iterations: u64 },

    #[error("{context}: system is singular; retry with ridge > 0")]
    Singular { context: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Exit code for the CLI: 1 usage/config, 2 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NanGradient { .. } | Error::NumericFailure { .. } => 2,
            _ => 1,
        }
    }
}
