//! `eqb`: run simulator scenarios, inspect their artifacts, replay demos.

mod demo;
mod inspect;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use equibit_core::simnet::{ScriptError, SimError};
use thiserror::Error;

#[derive(Parser, Debug)]
#[command(name = "eqb", version, about = "Equibit network simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write its transcript and chain exports.
    Run {
        scenario: PathBuf,
        /// Replace the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; EQB_SIM_OUT takes precedence.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the event log while running.
        #[arg(short, long, action = clap::ArgAction::Count)]
        verbose: u8,
    },
    /// Query a transcript or a chain export.
    Inspect {
        file: PathBuf,
        /// issuer-summary | holder-balances | authenticity | swap-state | book
        #[arg(long)]
        query: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
        /// Simulated time in seconds (book, holder-balances on a chain export).
        #[arg(long)]
        at: Option<u64>,
        /// TXID:VOUT for the authenticity query.
        #[arg(long)]
        outpoint: Option<String>,
        /// Restrict swap-state to one swap label.
        #[arg(long)]
        swap: Option<String>,
    },
    /// Replay a canned walkthrough: swap, poll or passport.
    Demo { name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error(transparent)]
    Script(#[from] ScriptError),
    #[error("{0}")]
    Invariant(SimError),
    #[error("unknown query {0:?}; expected issuer-summary, holder-balances, authenticity, swap-state or book")]
    UnknownQuery(String),
    #[error("unknown demo {0:?}; expected swap, poll or passport")]
    UnknownDemo(String),
    #[error("{0}")]
    Artifact(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Invariant(_) => 1,
            _ => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Script(s) => CliError::Script(s),
            other => CliError::Invariant(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            verbose,
        } => run::cmd_run(&scenario, seed, out, verbose),
        Command::Inspect {
            file,
            query,
            format,
            at,
            outpoint,
            swap,
        } => inspect::cmd_inspect(
            &file,
            &query,
            &inspect::Options {
                format,
                at,
                outpoint,
                swap,
            },
        ),
        Command::Demo { name } => demo::cmd_demo(&name),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            match &e {
                CliError::Invariant(SimError::Invariant { property, .. }) => {
                    eprintln!("invariant violated: {property}\n{e}")
                }
                _ => eprintln!("error: {e}"),
            }
            ExitCode::from(e.exit_code())
        }
    }
}
