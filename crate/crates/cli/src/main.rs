//! `tfm`: fit, screen, simulate and replicate two-regime threshold factor
//! models.
//!
//! Exit codes: 0 on success, 2 for input and configuration errors, 3 for
//! numerical failures, 4 when a threshold setting leaves a regime or the
//! search grid empty. The worker count comes from `TFM_THREADS`.

mod args;
mod commands;
mod config;
mod error;
mod inputs;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("TFM_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| CliError::Input(format!("TFM_THREADS={raw:?} is not a positive integer")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(format!("cannot start {threads} workers: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(a) => commands::fit(a),
        Command::Screen(a) => commands::screen(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Replicate(a) => commands::replicate(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tfm: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
