//! `panoqa` command line: dataset generation, wavelet analysis, baseline
//! metrics, SAP-net training, evaluation, ablation and plot data.
//!
//! Every subcommand resolves its settings as defaults < `--config` JSON <
//! flags, writes a snapshot of the resolved settings next to its outputs and
//! keeps all artifacts under `--out-dir`.

use std::ffi::OsString;
use std::fmt;

use clap::Parser;

mod commands;
pub mod config;
pub mod render;

pub use commands::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "PANOQA_THREADS";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, missing inputs, malformed files.
    User(String),
    Internal(String),
}

impl CliError {
    pub fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::User(m) => write!(f, "{m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<panoqa_core::Error> for CliError {
    fn from(e: panoqa_core::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::user(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
        log::debug!("thread pool already configured: {e}");
    }
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USER } else { EXIT_OK };
        }
    };
    let result = configure_threads().and_then(|_| commands::dispatch(cli.command));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
