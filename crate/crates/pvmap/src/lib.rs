//! File formats, configuration and the command-line stages around
//! `pvmap-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use config::Config;
pub use error::{CliError, CliResult};
