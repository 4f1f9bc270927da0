use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid MDP field `{field}`: {message}")]
    InvalidMdp { field: String, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("schedule is infeasible: {0}")]
    InfeasibleSchedule(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o failure: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid_mdp(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidMdp {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
