//! Library side of the `encdp` command-line tool: run configuration,
//! subcommands and output plumbing.

pub mod commands;
pub mod config;
pub mod error;
pub mod l1;
pub mod output;

pub use config::RunConfig;
pub use error::{CliError, Result};
