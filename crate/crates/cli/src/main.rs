//! `agnet`: train and evaluate modular graph-network predictors.
//!
//! Subcommands: `generate` (synthetic metaset), `train` (annealed structure
//! search + gradient training), `adapt` (frozen-library structure search for
//! one task), `eval` (score a checkpoint on a metaset), `report` (collate
//! summaries into a results table).
//!
//! Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
//! failure (non-finite loss).

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<agnet::Error> for CliError {
    fn from(e: agnet::Error) -> Self {
        use agnet::Error::*;
        match e {
            NonFinite(_) => CliError::Numeric(e.to_string()),
            Parse { .. } | Data { .. } | Io(_) | Json(_) | EmptyTaskSet => {
                CliError::Data(e.to_string())
            }
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "agnet", version, about = "Modular meta-learning over graph networks")]
struct Cli {
    /// Override the seed from the config; all randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Progress logging on stderr (artifacts are unaffected).
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic metaset with known ground truth.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a module library with annealed structure search.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Search a structure for one task against a frozen checkpoint.
    Adapt {
        #[arg(long)]
        config: PathBuf,
        /// Task CSV file (same column layout as metaset tasks).
        #[arg(long)]
        task: PathBuf,
    },
    /// Evaluate a checkpoint on a metaset's meta-test tasks.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Collate summary files into a results table (CSV + aligned text).
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate { config } => {
            let cfg = config::load_config(config)?;
            commands::run_generate(&cfg, cli.seed, cli.verbose)
        }
        Command::Train { config } => {
            let cfg = config::load_config(config)?;
            commands::run_train(&cfg, cli.seed, cli.verbose)
        }
        Command::Adapt { config, task } => {
            let cfg = config::load_config(config)?;
            commands::run_adapt(&cfg, task, cli.seed, cli.verbose)
        }
        Command::Eval { config } => {
            let cfg = config::load_config(config)?;
            commands::run_eval(&cfg, cli.seed, cli.verbose)
        }
        Command::Report { input, output } => commands::run_report(input, output),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with successful exit.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
