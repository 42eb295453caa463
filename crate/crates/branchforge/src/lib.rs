//! File formats, the data-directory layout and the subcommands of the
//! `branchforge` tool, on top of `branchforge-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod oracle;
pub mod store;

pub use error::CliError;
