use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shape or geometry mismatch.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// Value outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Violated precondition of an API call.
    #[error("contract error: {0}")]
    Contract(String),
    /// Operation invoked in the wrong state (e.g. double backward).
    #[error("state error: {0}")]
    State(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("corrupt data: {0}")]
    Corrupt(String),
    #[error("configuration error: {0}")]
    Config(String),
    /// A training objective term evaluated to NaN or infinity.
    #[error("non-finite value in {term}: {value}")]
    NonFinite { term: String, value: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
