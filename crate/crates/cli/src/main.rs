use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mrac_cli::{cmd_compare, cmd_run, Overrides};

/// Memory-based data-driven MRAC simulator.
///
/// Set MRAC_LOG_EVERY=k to keep every k-th row in CSV output.
#[derive(Parser)]
#[command(name = "mrac", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory.csv and summary.json
    Run {
        /// Scenario JSON file
        scenario: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Override the integration step
        #[arg(long)]
        dt: Option<f64>,
        /// Override the horizon
        #[arg(long = "t-end")]
        t_end: Option<f64>,
    },
    /// Run the proposed law and the classical baseline side by side
    Compare {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { scenario, out, dt, t_end } => cmd_run(&scenario, &out, Overrides { dt, t_end }),
        Command::Compare { scenario, out } => cmd_compare(&scenario, &out),
    };
    ExitCode::from(code)
}
