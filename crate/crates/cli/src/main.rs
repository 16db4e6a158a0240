//! `bpre-lab`: run scenarios and the acceptance suite from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "bpre-lab",
    version,
    about = "Branching processes in random environments: criteria, simulation and verification"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario file (TOML, or JSON when the extension is .json).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; output does not depend on this.
    #[arg(long, global = true, env = "BPRE_LAB_THREADS")]
    pub threads: Option<usize>,
    /// Directory receiving the artifact instead of standard output.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact environment criteria as JSON.
    Criteria,
    /// Annealed trajectories as CSV (or JSON).
    Simulate,
    /// Weighted-moment reports with truncation-ladder verdicts.
    Moments,
    /// Hill tail-index scan on surviving trajectories.
    Tail,
    /// Convexification and concave-correction certificates.
    Fncheck,
    /// The experiment named in the scenario file.
    Run,
    /// The acceptance suite; exits 3 when any criterion fails.
    Verify {
        /// Runs only these criteria (repeatable).
        #[arg(long = "criterion", value_parser = clap::value_parser!(u8).range(1..=11))]
        criteria: Vec<u8>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("bpre-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
