use thiserror::Error;

/// Errors shared by the geometry, raster, simulator and metric modules.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The raster is too coarse to resolve the requested region.
    #[error("resolution exceeded: {0}")]
    ResolutionExceeded(String),

    #[error("index {index} out of range for {len} entries")]
    OutOfRange { index: usize, len: usize },

    #[error("unknown cell id {0}")]
    UnknownCell(u32),

    /// One message per offending config field.
    #[error("invalid scenario config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
