use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An operation whose result is undefined for the given input, e.g. the
    /// Dice coefficient of two empty filters.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("dictionary build failed: {0}")]
    DictionaryBuildFailure(String),

    #[error("corrupt dictionary: {0}")]
    CorruptDictionary(String),

    #[error("malformed report: {0}")]
    MalformedReport(String),

    #[error("malformed encoding: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
