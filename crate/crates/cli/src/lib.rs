//! Command-line front end: configuration, commands and plots.

pub mod app;
pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use app::{parse_args, Cli};
pub use commands::{run, Outcome};
pub use config::{parse_config, RunConfig};
pub use error::CliError;
