use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    /// An input violated a documented precondition or type invariant.
    #[error("validation error: {0}")]
    Validation(String),
    /// A gradient was requested where the loss is not differentiable.
    #[error("non-smooth point: {0}")]
    NonSmooth(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Validation(msg.into()))
}
