//! `inkdiff`: build corpora, train the recognizer and the diffusion model,
//! generate, score and run the packaged experiments.
//!
//! Failures print one JSON line `{"error": KIND, "message": TEXT}` on stderr and
//! exit with status 1.

mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::Cli;

/// Failure of a command, with a stable machine-readable kind.
#[derive(Debug)]
pub enum CliError {
    Core(inkdiff_core::Error),
    MissingFlag(&'static str),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::MissingFlag(_) => "missing_flag",
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::MissingFlag(flag) => {
                write!(f, "{flag} is required (or supply it through --config)")
            }
        }
    }
}

impl From<inkdiff_core::Error> for CliError {
    fn from(e: inkdiff_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp_secs()
        .init();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
