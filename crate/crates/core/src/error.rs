use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid experiment parameters; detected before anything runs.
    #[error("config error: {0}")]
    Config(String),
    /// A call whose arguments fall outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
