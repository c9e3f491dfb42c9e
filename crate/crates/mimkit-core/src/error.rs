//! Error type shared across the library.

use thiserror::Error;

/// Library-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes or joint layouts do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A caller violated an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A name lookup (segment, member key, parameter) failed.
    #[error("unknown name: {0}")]
    Lookup(String),

    /// A configuration is internally inconsistent or too small.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The computation graph was used incorrectly.
    #[error("graph error: {0}")]
    Graph(String),

    /// Cosine similarity is undefined (zero-norm encoding).
    #[error("undefined similarity: {0}")]
    UndefinedSimilarity(String),

    /// Calibration over a cohort with no score spread.
    #[error("degenerate calibration: {0}")]
    DegenerateCalibration(String),

    /// A dataset or report manifest is missing or malformed.
    #[error("manifest error: {0}")]
    Manifest(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: non-finite loss")]
    Divergence {
        /// Global step index at which the loss became non-finite.
        step: usize,
    },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure.
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
