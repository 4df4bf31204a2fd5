use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ergodicity violation: {0}")]
    ErgodicityViolation(String),

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("degenerate least-squares fit: {0}")]
    DegenerateFit(String),

    #[error("feature excitation violated: {0}")]
    ExcitationViolation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("phase overflow: improve called after {0} phases")]
    PhaseOverflow(usize),

    #[error("phase {phase}: {source}")]
    InPhase {
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("run with seed {seed} failed: {source}")]
    RunFailed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
