//! Command-line front end: configuration, checkpoints, CSV output and the
//! experiment subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod csv;
pub mod error;

pub use config::ExperimentConfig;
pub use error::CliError;
