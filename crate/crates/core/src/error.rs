use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical sanity check failed (row defect, unstable system, ...).
    #[error("numerical guard tripped: {0}")]
    Numerical(String),

    #[error("{count} candidate schedules exceed the enumeration limit of {limit}; shorten the horizon or tighten the rate limit")]
    Intractable { count: u128, limit: u128 },

    #[error("malformed file: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_param(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}

pub(crate) fn invalid_input(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
