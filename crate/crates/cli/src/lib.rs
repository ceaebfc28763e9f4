//! Command-line front end: spec and parameter files, simulation, tuning,
//! signal analysis and bifurcation data export.

pub mod commands;
pub mod files;
pub mod kv;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

/// Failures, each mapped to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
    /// The requested behaviour lies outside what the model can reach.
    #[error("{name}: {message}")]
    Unreachable { name: &'static str, message: String },
    #[error("validation failed: {0}")]
    ValidationFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ValidationFailed(_) => 1,
            CliError::Parse(_) | CliError::Io(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Unreachable { .. } => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pulsesurge", version, about = "Pulse and surge patterns from a slow-fast coupled oscillator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a parameter set and write `trajectory.csv` and `events.csv`.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        /// Duration in days.
        #[arg(long)]
        days: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Integrator tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 2880.0)]
        samples_per_day: f64,
        #[arg(long)]
        gnuplot: bool,
    },
    /// Fit parameters to a cycle spec; writes `params.txt` and `diagnostics.json`.
    Tune {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        gnuplot: bool,
    },
    /// Extract the secretion features of a trajectory CSV as JSON.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        /// Supplies the time unit and cubic shape.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frequency ratio used to place the onset of the frequency rise.
        #[arg(long)]
        ratio: Option<f64>,
        /// Detect surges from the output signal alone instead of the regulator.
        #[arg(long)]
        signal_only: bool,
    },
    /// Hopf and homoclinic surfaces over a grid of `b1`.
    BifurcationMap {
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = 41)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gnuplot: bool,
    },
    /// A leaf of constant duration ratio, zero order and simulated.
    Leaf {
        #[arg(long)]
        ratio: f64,
        /// Simulation `epsilon`; without it only the zero-order leaf is written.
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long, default_value_t = 64)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        gnuplot: bool,
    },
    /// Simulate a parameter set and check it against a spec; exits 1 on failure.
    Validate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// Duration in days; defaults to a little over three cycles.
        #[arg(long)]
        days: Option<f64>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    use commands::*;
    match cli.command {
        Command::Simulate { params, days, out, tol, samples_per_day, gnuplot } => {
            simulate(&params, days, &out, tol, samples_per_day, gnuplot)
        }
        Command::Tune { spec, out, tol, gnuplot } => tune(&spec, &out, tol, gnuplot),
        Command::Analyze { input, params, out, ratio, signal_only } => {
            analyze(&input, params.as_deref(), out.as_deref(), ratio, signal_only)
        }
        Command::BifurcationMap { eps, points, out, gnuplot } => bifurcation_map(eps, points, out.as_deref(), gnuplot),
        Command::Leaf { ratio, eps, points, out, gnuplot } => leaf(ratio, eps, points, out.as_deref(), gnuplot),
        Command::Validate { spec, params, days, tol, out } => validate(&spec, &params, days, tol, out.as_deref()),
    }
}
