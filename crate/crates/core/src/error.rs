//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by model validation, quantizer evaluation, search, and
/// trial execution.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Configuration could not be parsed or refers to unknown entities.
    #[error("configuration error: {0}")]
    Config(String),

    /// A domain invariant failed at construction time.
    #[error("validation failed for `{field}`: {reason}")]
    Validation { field: String, reason: String },

    /// An observation was fed to a density or quantizer of the wrong kind.
    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    /// Caller violated a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine could not certify its result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A single trial ran past the configured step cap.
    #[error("trial exceeded step cap {cap} in {stage} stage (posterior {posterior:?})")]
    RunawayTrial {
        cap: u64,
        stage: &'static str,
        posterior: Vec<f64>,
    },

    /// A received message has zero likelihood under every state.
    #[error("message {message:?} is impossible under every state for quantizer {quantizer}")]
    ImpossibleMessage {
        quantizer: String,
        message: Vec<usize>,
    },

    /// Every candidate quantizer carries zero information about the state.
    #[error("degenerate search pool: {0}")]
    DegeneratePool(String),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
