//! Configuration, file formats and subcommand drivers for the `smoo`
//! command-line tool.

pub mod commands;
pub mod config;
pub mod output;
pub mod stats;

pub use config::{parse_seeds, Mode, RunConfig};
