use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-side precondition does not hold.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("instance too large for exhaustive enumeration: {0}")]
    TooLarge(String),

    /// A guaranteed inequality or identity failed at runtime.
    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn is_invariant(&self) -> bool {
        matches!(self, Error::Invariant(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn invariant(msg: impl Into<String>) -> Error {
    Error::Invariant(msg.into())
}
