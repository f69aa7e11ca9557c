//! `klms`: dictionaries, closed-form learning curves, Monte Carlo simulation
//! and theory-versus-simulation comparison for Gaussian-kernel LMS.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use config::{FileConfig, Overrides, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] klms::Error),
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 for bad input, 3 for numerical failures.
    fn exit_code(&self) -> u8 {
        use klms::Error as E;
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Core(e) => match e {
                E::DimensionMismatch { .. }
                | E::InvalidParameter(_)
                | E::HorizonMismatch { .. }
                | E::Parse(_)
                | E::Io(_)
                | E::Csv(_) => 2,
                E::SingularMatrix(_)
                | E::IllConditioned { .. }
                | E::NonFinite { .. }
                | E::RunDiverged { .. }
                | E::Diverged { .. }
                | E::Unstable { .. } => 3,
            },
        }
    }
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    CompareFailed,
    Unstable,
}

impl Status {
    fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::CompareFailed => 1,
            Status::Unstable => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "klms", version, about = "Transient and steady-state analysis of Gaussian-kernel LMS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build (or load and validate) the dictionary and report its diagnostics.
    Dict(CommonArgs),
    /// Closed-form theory: stability, steady state and predicted learning curve.
    Theory(CommonArgs),
    /// Monte Carlo learning curve of the filter.
    Simulate(CommonArgs),
    /// Compare simulation against theory, either end to end or from CSV files.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base parameter set: exp1 or exp2.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Step size.
    #[arg(long)]
    eta: Option<f64>,
    /// Kernel bandwidth.
    #[arg(long)]
    sigma: Option<f64>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Empirical curve CSV (n,mse_empirical,...); requires --theory.
    #[arg(long, requires = "theory")]
    empirical: Option<PathBuf>,
    /// Predicted curve CSV (n,mse_theory,...); requires --empirical.
    #[arg(long, requires = "empirical")]
    theory: Option<PathBuf>,
    /// Closed-form steady-state MSE to compare against when reading CSV files.
    #[arg(long, requires = "theory")]
    steady_state: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let flags = Overrides {
            preset: self.preset.clone(),
            seed: self.seed,
            out: self.out.clone(),
            runs: self.runs,
            horizon: self.horizon,
            eta: self.eta,
            sigma: self.sigma,
        };
        match &self.config {
            Some(path) => {
                let file = FileConfig::load(path)?;
                config::resolve(Some((&file, path)), &flags)
            }
            None => config::resolve(None, &flags),
        }
    }
}

fn run(cli: Cli) -> Result<Status, CliError> {
    match cli.command {
        Command::Dict(args) => commands::dict(&args.resolve()?),
        Command::Theory(args) => commands::theory(&args.resolve()?),
        Command::Simulate(args) => commands::simulate(&args.resolve()?),
        Command::Compare(args) => {
            let rc = args.common.resolve()?;
            match (&args.empirical, &args.theory) {
                (Some(emp), Some(th)) => commands::compare_files(&rc, emp, th, args.steady_state),
                _ => commands::compare(&rc),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
