use thiserror::Error;

/// Errors surfaced by the optimization engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Observations carry no usable signal (e.g. all values identical).
    #[error("degenerate data: {0}")]
    DegenerateData(String),

    /// The noise-augmented kernel matrix could not be factorized even with
    /// escalated jitter; usually a sign of ill-conditioned hyperparameters.
    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("record error: {0}")]
    Record(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
