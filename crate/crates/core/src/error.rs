use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch on {axis}: expected {expected}, found {found}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("absorption unreachable from state {state}")]
    AbsorptionUnreachable { state: usize },

    #[error("ergodicity violated: {0}")]
    ErgodicityViolated(String),

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("support violation: target plays action {action} in state {state:?} which the data policy never plays")]
    SupportViolation { action: usize, state: Option<usize> },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("non-positive affinity for viewer {viewer} after {retries} creator redraws")]
    NonPositiveAffinity { viewer: u64, retries: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        reason: reason.into(),
    }
}
