use alloc::string::String;

/// Errors raised by the optimizer core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("state error: {0}")]
    State(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("estimation error: {0}")]
    Estimation(String),
    #[error("feature error: {0}")]
    Feature(String),
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = core::result::Result<T, Error>;
