//! Dataset CSV format, the `celladj` command line and the what-if HTTP
//! service.

pub mod cli;
pub mod csvio;
pub mod error;
pub mod report;
pub mod service;

pub use error::{Error, Result};
