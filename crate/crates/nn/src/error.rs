use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("non-finite {what} at epoch {epoch}")]
    NonFinite { what: &'static str, epoch: usize },

    #[error(transparent)]
    Core(#[from] handsar_core::Error),
}

impl NnError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        NnError::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
