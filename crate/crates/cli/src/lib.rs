//! Command implementations and file formats behind the `hednet` binary.

pub mod commands;
pub mod error;
pub mod formats;
pub mod gradcheck;
pub mod report;

pub use error::{CliError, CliResult};
