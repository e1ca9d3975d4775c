//! Command-line frontend for the beam-configuration optimizer: environment
//! snapshot generation, search runs, route evaluation, report rendering,
//! and the subprocess bridge to external task environments.

pub mod bridge;
pub mod commands;
pub mod config;
pub mod error;
pub mod reports;
pub mod snapshot_io;

pub use error::CliError;
