use thiserror::Error;

/// Process exit codes of the command line.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Error)]
pub enum Error {
    /// A flag or request field is invalid.
    #[error("{0}")]
    Usage(String),

    /// Input data is missing, malformed or inconsistent.
    #[error("{0}")]
    Data(String),

    /// A computation produced a non-finite result.
    #[error("{0}")]
    Numeric(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => EXIT_USAGE,
            Error::Data(_) => EXIT_DATA,
            Error::Numeric(_) => EXIT_NUMERIC,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn data(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Data(e.to_string())
    }
}

impl From<celladj_core::Error> for Error {
    fn from(e: celladj_core::Error) -> Self {
        use celladj_core::Error as E;
        match e {
            E::InvalidArgument(_) => Error::Usage(e.to_string()),
            _ => Error::Data(e.to_string()),
        }
    }
}

impl From<celladj_forecast::Error> for Error {
    fn from(e: celladj_forecast::Error) -> Self {
        use celladj_forecast::Error as E;
        match e {
            E::NonFinite(_) => Error::Numeric(e.to_string()),
            E::InvalidArgument(_) => Error::Usage(e.to_string()),
            E::Core(inner) => inner.into(),
            _ => Error::Data(e.to_string()),
        }
    }
}
