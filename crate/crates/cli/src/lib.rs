//! Command-line driver for `smd-core` experiments.
//!
//! ```text
//! smd <run|montecarlo|bounds|validate> CONFIG [--seed N] [--out DIR] [--check]
//! ```
//!
//! Exit status: 0 success, 1 configuration error, 2 numerical error,
//! 3 acceptance-check violation (only with `--check`).

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

use smd_core::SmdError;

use crate::commands::{Context, Outcome};
use crate::config::ExperimentConfig;

/// Environment variable that sets the worker count.
pub const WORKERS_ENV: &str = "SMD_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] SmdError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "smd", version, about = "Stochastic mirror descent experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Single trajectory with per-step audit CSV.
    Run(Args),
    /// Parallel trials, tail estimates and bound comparisons.
    Montecarlo(Args),
    /// Closed-form bounds and iteration thresholds.
    Bounds(Args),
    /// Oracle moment diagnostics and assumption report.
    Validate(Args),
}

#[derive(Debug, clap::Args)]
struct Args {
    /// Experiment file (TOML).
    config: PathBuf,
    /// Overrides run.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output.directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit with status 3 if any acceptance check fails.
    #[arg(long)]
    check: bool,
}

fn workers() -> Result<Option<usize>, CliError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn execute(command: Command) -> Result<(Outcome, bool), CliError> {
    let (args, f): (Args, fn(&Context<'_>) -> Result<Outcome, CliError>) = match command {
        Command::Run(a) => (a, commands::run),
        Command::Montecarlo(a) => (a, commands::montecarlo),
        Command::Bounds(a) => (a, commands::bounds),
        Command::Validate(a) => (a, commands::validate),
    };
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        config.run.seed = s;
    }
    let ctx = Context {
        digest: config.digest(),
        dir: commands::output_dir(&config, args.out.as_deref()),
        config: &config,
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers()? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let outcome = pool.install(|| f(&ctx))?;
    Ok((outcome, args.check))
}

/// Parse `argv` (including the program name), run, and return the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok((outcome, check)) => {
            if let Some(s) = &outcome.stdout {
                println!("{s}");
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            for v in &outcome.violations {
                eprintln!("check failed: {v}");
            }
            if check && !outcome.violations.is_empty() {
                3
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
