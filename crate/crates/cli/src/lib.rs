//! Config-driven pipeline around `midt-core`: data generation, training,
//! sampling, evaluation and report emission, one run directory per config.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use commands::{run, Command, Run, Source};
pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
