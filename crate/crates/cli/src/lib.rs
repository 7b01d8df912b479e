//! Configuration and workflow plumbing behind the `autoseg` binary.

pub mod commands;
pub mod config;

pub use commands::{cmd_evaluate, cmd_predict, cmd_score, cmd_train, CliError};
pub use config::{Effective, Overrides, RunConfig};
