use thiserror::Error;

use crate::bank::BankError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// Inputs are well-formed but inconsistent with each other, e.g. an id
    /// with no label or a class with no proxy.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Bank(#[from] BankError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
