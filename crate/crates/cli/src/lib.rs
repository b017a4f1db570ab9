//! Command implementations behind the `hsda` binary.

pub mod commands;
pub mod config;

pub use config::RunConfig;
