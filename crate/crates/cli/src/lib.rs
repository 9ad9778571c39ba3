//! Command-line front end for the storage-market library.

pub mod commands;
pub mod config;
pub mod io;

use std::ffi::OsString;
use std::path::PathBuf;

use thiserror::Error;

pub use config::{parse_config, Command, Format, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(clap::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("range inversion (min > max): {0}")]
    RangeInversion(String),
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("malformed file {}: {reason}", .path.display())]
    Malformed { path: PathBuf, reason: String },
    #[error("cannot access {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("output error: {0}")]
    Csv(String),
    #[error(transparent)]
    Market(#[from] storage_market::market::MarketError),
    #[error(transparent)]
    Game(#[from] storage_market::game::GameError),
    #[error(transparent)]
    Harness(#[from] storage_market::harness::HarnessError),
}

impl CliError {
    /// 2 for anything wrong with the invocation, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) => e.exit_code(),
            CliError::Config(_)
            | CliError::RangeInversion(_)
            | CliError::MissingFile(_)
            | CliError::Malformed { .. } => 2,
            _ => 1,
        }
    }
}

/// Runs one invocation and returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_config(args).and_then(|cfg| commands::execute(&cfg));
    match result {
        Ok(code) => code,
        Err(CliError::Usage(e)) => {
            // clap prints help and version to stdout and errors to stderr
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
