//! Scenario runner for the `levylab` numerical laboratory.
//!
//! A run loads a TOML config (or a builtin scenario), executes each
//! scenario's experiment, and writes one self-describing JSON report per
//! scenario (plus CSV plot tables on request) together with a run manifest.
//!
//! Reports are deterministic: per-scenario seeds are derived by hashing the
//! run seed with the scenario id ([`levylab::rng::scenario_seed`]), replica
//! streams are indexed rather than shared, and every parallel reduction
//! collects in replica order — rerunning with the same seeds reproduces the
//! JSON byte for byte apart from the `generated_at_unix_s` field.

use thiserror::Error;

pub mod config;
pub mod experiments;
pub mod report;
pub mod runner;
pub mod scenarios;

/// Process exit codes: `0` success, `2` config error, `3` experiment
/// failure, `4` I/O error.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("experiment failure: {0}")]
    Experiment(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Experiment(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}
