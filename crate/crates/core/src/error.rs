use thiserror::Error;

use crate::lap::SourceId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("source {0} is not registered")]
    UnknownSource(SourceId),

    #[error("invalid state: {0}")]
    State(String),

    #[error("contract violation: {0}")]
    Contract(String),
}
