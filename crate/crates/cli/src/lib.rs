//! Std front-end for `twoscale-core`: INI configuration, CSV artifacts and the
//! subcommand pipeline.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;

pub use config::RunConfig;
