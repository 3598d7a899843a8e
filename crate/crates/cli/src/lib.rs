//! Command-line surface of the fairint toolkit: experiment configs, the
//! subcommands and the report files they write.

pub mod commands;
pub mod config;
pub mod probe;
pub mod reports;
