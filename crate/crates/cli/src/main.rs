//! `hystheat`: runs simulations, periodic-solution enumeration, bifurcation
//! scans, stability reports and rate measurements from a JSON config.
//!
//! Exit status: 0 success, 1 numerical failure, 2 configuration error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, Report};
use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "hystheat",
    version,
    about = "Relay-hysteresis heat control analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate from the initial state; writes trajectory.csv and summary.json.
    Simulate(RunArgs),
    /// Enumerate symmetric periodic solutions; writes solutions.json.
    Periodic(RunArgs),
    /// Scan the bifurcation diagram; writes diagram.csv and points.json.
    Bifurcate(RunArgs),
    /// Classify the valid periodic solutions; writes stability.json.
    Stability(RunArgs),
    /// Measure the convergence rate near a periodic solution; writes rate.csv and rate.json.
    Rate(RunArgs),
    /// Run the acceptance suite.
    Verify,
}

fn run(cli: Cli) -> Result<Report, CliError> {
    let load = |args: &RunArgs| RunConfig::load(&args.config, &args.overrides);
    match cli.command {
        Command::Simulate(a) => commands::simulate_cmd(&load(&a)?),
        Command::Periodic(a) => commands::periodic_cmd(&load(&a)?),
        Command::Bifurcate(a) => commands::bifurcate_cmd(&load(&a)?),
        Command::Stability(a) => commands::stability_cmd(&load(&a)?),
        Command::Rate(a) => commands::rate_cmd(&load(&a)?),
        Command::Verify => commands::verify_cmd(),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            for path in &report.files {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
