//! Command-line front end: analyse a dataset, run simulation experiments
//! from a config file, and render result tables.

mod analyze;
mod config;
mod report;
mod simulate;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Confidence sets of sparse regression models after data-driven reduction.
#[derive(Parser)]
#[command(name = "confsets", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse a CSV dataset and write the confidence set of models.
    Analyze(analyze::AnalyzeArgs),
    /// Run a simulation experiment described by a key = value config file.
    Simulate(simulate::SimulateArgs),
    /// Render a results CSV as an aligned plain-text table.
    Report(report::ReportArgs),
}

/// Failure modes with their process exit codes: malformed input exits 2,
/// unsatisfied statistical preconditions exit 3.
pub enum AppError {
    Input(String),
    Stats(String),
    Other(anyhow::Error),
}

impl AppError {
    fn exit(self) -> ExitCode {
        match self {
            AppError::Input(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(2)
            }
            AppError::Stats(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(3)
            }
            AppError::Other(err) => {
                eprintln!("error: {err:#}");
                ExitCode::from(1)
            }
        }
    }
}

impl From<anyhow::Error> for AppError {
    fn from(err: anyhow::Error) -> Self {
        AppError::Other(err)
    }
}

impl From<std::io::Error> for AppError {
    fn from(err: std::io::Error) -> Self {
        AppError::Other(err.into())
    }
}

pub type AppResult<T> = Result<T, AppError>;

pub fn ensure_out_dir(path: &PathBuf) -> AppResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| AppError::Other(anyhow::anyhow!("cannot create output dir: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(args) => analyze::run(args),
        Command::Simulate(args) => simulate::run(args),
        Command::Report(args) => report::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => err.exit(),
    }
}
