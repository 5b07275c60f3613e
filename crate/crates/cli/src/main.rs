mod commands;
mod config;
mod error;
mod oracle_check;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "fuzzyseg", version, about = "Refine segmentation pseudo-labels against weak-label constraints")]
struct Cli {
    /// Worker threads (default: logical cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

/// Options every command accepts.
#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set refine.steps=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Random seed. Beats `--set` and the config file; FUZZYSEG_SEED applies when neither sets one.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Refine one pseudo-label field and write the resulting mask.
    Refine(commands::RefineArgs),
    /// Score predicted masks against ground-truth masks.
    Evaluate(commands::EvaluateArgs),
    /// Leave-one-out constraint ablation over a manifest of samples.
    Ablate(commands::AblateArgs),
    /// Derive box and point annotations from ground-truth masks.
    GenWeak(commands::GenWeakArgs),
    /// Compare fuzzy and exact constraint probabilities on tiny grids.
    OracleCheck(oracle_check::OracleCheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Refine(a) => commands::refine(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::GenWeak(a) => commands::gen_weak(a),
        Command::OracleCheck(a) => oracle_check::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fuzzyseg: {e}");
            e.exit_code()
        }
    }
}
