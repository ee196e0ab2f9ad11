use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied malformed or inconsistent input.
    #[error("invalid input: {0}")]
    Input(String),
    /// A computation produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Configuration failed validation or could not be parsed.
    #[error("invalid config: {0}")]
    Config(String),
    /// A file did not follow the expected on-disk format.
    #[error("malformed {kind}: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn numeric<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Numeric(msg.into()))
}
