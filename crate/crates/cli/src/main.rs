//! `wsrnet` command-line driver: data generation, labeling, training,
//! evaluation, landscape export, numerical verification and report tables.

mod commands;
mod config;
mod report;
mod verify;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Failure classes mapped to exit codes: 2 for bad invocations, 1 for runs
/// that started and failed.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

impl From<wsrnet::Error> for CliError {
    fn from(e: wsrnet::Error) -> Self {
        CliError::Failed(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "wsrnet", version, about = "Neural power control for interference channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a Rayleigh or toy channel dataset.
    GenData(commands::GenDataArgs),
    /// Label snapshots with WMMSE.
    Label(commands::LabelArgs),
    /// Train a network (SL, UL, SSL or pretrained SSL).
    Train(commands::TrainArgs),
    /// Mean sum rate of a checkpoint, or of WMMSE, on a dataset.
    Eval(commands::EvalArgs),
    /// Export a sum-rate landscape grid.
    Landscape(commands::LandscapeArgs),
    /// Run the numerical checks and write a verdict.
    Verify(verify::VerifyArgs),
    /// Spectral diagnostics of a checkpoint.
    Spectral(commands::SpectralArgs),
    /// Aggregate evaluation records into figure and table CSVs.
    Report(report::ReportArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("WSRNET_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Label(a) => commands::label(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Landscape(a) => commands::landscape(a),
        Command::Verify(a) => verify::run(a),
        Command::Spectral(a) => commands::spectral(a),
        Command::Report(a) => report::run(a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
