use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain the operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    /// A binary variable that must take both values takes only one.
    #[error("{variable} has a single class; both 0 and 1 must be present")]
    SingleClass { variable: &'static str },

    /// Malformed user data; `row` is 1-based and counts data rows only.
    #[error("data error at row {row}: {message}")]
    Data { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
