//! Subcommands behind the `ethplan` binary. Each command takes a parsed
//! [`RunConfig`], writes its outputs under `config.out` and reports failures
//! as a [`CliError`] that maps onto the process exit code.

// NaN must fail validation, so comparisons are negated on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;

use thiserror::Error;

pub use commands::{cmd_gen_suite, cmd_gradcheck, cmd_run, cmd_sweep, cmd_train, GradcheckOptions, SWEEP_HEADER};
pub use config::{load_config, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("scenario error: {0}")]
    Scenario(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("gradient check failed: max relative error {max_error:e} exceeds {tolerance:e}")]
    Gradcheck { max_error: f64, tolerance: f64 },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Scenario(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Gradcheck { .. } => 4,
        }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.display().to_string(), source }
    }
}
