use thiserror::Error;

/// Errors raised across the library. Each variant maps onto a CLI exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violates a documented parameter gate.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// An input fails a precondition (class membership, decay, ...).
    #[error("precondition failed: {0}")]
    Precondition(String),
    /// Two grid functions live on different grids.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    /// A numerical run produced non-finite values or aborted.
    #[error("runtime error in {op}: {msg}")]
    Runtime { op: String, msg: String },
    /// Configuration could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),
    /// File-system or serialization failure.
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Parameter(msg.into()))
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
