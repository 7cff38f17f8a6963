//! Command-line front end for the storm-vortex detection pipeline.
//!
//! Subcommands cover the full workflow: `extract` (flow + descriptors),
//! `climatology` (storm-density grids), `train` (classifier fitting),
//! `detect` (classification with GeoJSON/PNG output), and `evaluate`
//! (held-out metrics and the lead-time curve).
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 internal error. Log verbosity comes from the `STORMFLOW_LOG`
//! environment variable (`error`, `warn`, `info`, `debug`, `trace`).

mod cache;
mod chart;
mod commands;
mod config;
mod extraction;
mod frames;
mod geojson;
mod manifest;
mod overlay;

use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

/// Detects storm-related cloud vortices in geostationary satellite imagery.
#[derive(Parser)]
#[command(name = "stormflow", version, about, max_term_width = 100)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args)]
pub struct CommonArgs {
    /// Pipeline configuration file (JSON).
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Override the configured seed (recorded in outputs, drives training).
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Estimate optical flow and write the vortex descriptor table.
    Extract {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the storm-density grid for a calendar date.
    Climatology {
        #[command(flatten)]
        common: CommonArgs,
        /// Date the density window is centered on (YYYY-MM-DD).
        #[arg(long, value_name = "YYYY-MM-DD")]
        date: NaiveDate,
    },
    /// Train the vortex classifier on the configured training days.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Where to write the model file (default: from the config).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Classify vortices and write GeoJSON plus PNG overlays per frame pair.
    Detect {
        #[command(flatten)]
        common: CommonArgs,
        /// Model file to apply (default: from the config).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
    /// Score the classifier on the configured test days; write metrics and
    /// the lead-time curve.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        /// Model file to apply (default: from the config).
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
}

/// Error carrying its process exit code: usage/config problems exit 1, data
/// problems exit 2. Internal errors (exit 3) are reserved for panics.
pub enum CliError {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    fn inner(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Data(e) => e,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags an error chain as a usage/configuration failure (exit 1).
pub fn usage_error<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Usage(e.into())
}

/// Tags an error chain as a data failure (exit 2).
pub fn data_error<E: Into<anyhow::Error>>(e: E) -> CliError {
    CliError::Data(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            );
            // Help and version requests print to stdout and succeed; real
            // parse errors print to stderr and exit with the usage code.
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };

    env_logger::Builder::from_env(
        env_logger::Env::new().filter_or("STORMFLOW_LOG", "info"),
    )
    .format_timestamp(None)
    .init();

    match panic::catch_unwind(AssertUnwindSafe(|| commands::run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("error: {:#}", err.inner());
            ExitCode::from(err.exit_code())
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}
