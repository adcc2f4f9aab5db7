//! Command-line front end: TOML configuration, subcommands and run manifests.

pub mod config;
pub mod quantity;
pub mod run;
