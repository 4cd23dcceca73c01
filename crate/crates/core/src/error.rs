use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("numerical degeneracy (condition hint {condition_hint:e}): {msg}")]
    NumericalDegeneracy { msg: String, condition_hint: f64 },
    #[error("unsupported size: {0}")]
    UnsupportedSize(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
