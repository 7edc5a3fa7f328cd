//! Experiment runner behind the `genz` binary: configuration, run artifacts, resumption
//! and reporting.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod report;
pub mod runner;

pub use config::RunConfig;
pub use error::CliError;
