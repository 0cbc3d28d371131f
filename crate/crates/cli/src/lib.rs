//! Command-line pipeline: synthesis, pre-training, segmentation and report
//! evaluation, and atlas construction.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use cli::run;
pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitKind};
