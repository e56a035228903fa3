//! Command-line front end: configuration, input handling, parallel chains
//! and result export.

mod analysis;
pub mod args;
mod commands;
pub mod config;
mod data;
mod output;

pub use commands::run;
pub use config::{ConfigError, RunConfig};
