use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A numerical failure. `context` names the task, parameter block or
    /// BO iteration that triggered it.
    #[error("numeric error in {context}: {message}")]
    Numeric { context: String, message: String },

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("budget exhausted: every candidate has been evaluated")]
    BudgetExhausted,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn numeric(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
            message: message.into(),
        }
    }

    /// Prefixes the context of a numeric error, leaving other variants untouched.
    pub fn with_context(self, outer: impl AsRef<str>) -> Self {
        match self {
            Error::Numeric { context, message } => Error::Numeric {
                context: format!("{}: {}", outer.as_ref(), context),
                message,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
