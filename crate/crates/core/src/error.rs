use thiserror::Error;

/// Error categories shared by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error at offset {offset}: {msg}")]
    Format { offset: u64, msg: String },
    #[error("unsupported wavelet base `{name}`: {reason}")]
    UnsupportedBase { name: String, reason: String },
    #[error("resolution error: {0}")]
    Resolution(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    /// Short category name, used by the command line tool for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension(_) | Error::Input(_) | Error::Usage(_) => "input",
            Error::Numeric(_) | Error::Resolution(_) => "numeric",
            Error::Config(_) | Error::UnsupportedBase { .. } => "config",
            Error::Format { .. } => "format",
            Error::Io(_) => "io",
        }
    }
}
