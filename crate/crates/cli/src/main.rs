//! `agreesum` — the pipeline driver: synthetic data generation, dataset
//! construction, entailment classifier training and serving, summarizer
//! training (supervised baselines and the agreement-rewarded recipe),
//! decoding, and evaluation.
//!
//! Exit codes: 0 success (a run manifest is written), 1 validation error,
//! 2 I/O or network error, 64 usage error. Every diagnostic on stderr
//! carries an `ERROR:<code>:` prefix.

mod commands;
mod manifest;
mod scorer;

use std::io::Write as _;

use agreesum_core::error::CoreError;
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "agreesum",
    version,
    about = "Agreement-oriented multi-document summarization laboratory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic intersection-summarization corpus.
    SynthData(commands::SynthDataArgs),
    /// Build train/dev/test splits from raw clusters and vote annotations.
    BuildDataset(commands::BuildDatasetArgs),
    /// Train the premise/hypothesis entailment classifier.
    TrainEntailment(commands::TrainEntailmentArgs),
    /// Serve an entailment scorer over HTTP.
    ServeEntailment(commands::ServeEntailmentArgs),
    /// Train a summarizer: supervised recipes b1-b4, or asm.
    Train(commands::TrainArgs),
    /// Decode clusters to summaries (beam, entdec rerank, or the b5 baseline).
    Decode(commands::DecodeArgs),
    /// Score decoded runs: ROUGE, agreement percentages, n-gram overlap.
    Evaluate(commands::EvaluateArgs),
}

/// Command-level errors: everything from the core library, plus the one
/// condition the library never sees — no entailment scorer configured.
#[derive(Debug)]
pub enum CliError {
    Core(CoreError),
    NoScorer,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Core(e) => e.fmt(f),
            CliError::NoScorer => write!(
                f,
                "no entailment scorer configured (pass --scorer-oracle, \
                 --entailment-ckpt, --scorer-endpoint, or set {})",
                scorer::ENDPOINT_ENV
            ),
        }
    }
}

impl CliError {
    fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.code(),
            CliError::NoScorer => "NO_SCORER",
        }
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => e.exit_code(),
            CliError::NoScorer => 1,
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::SynthData(args) => commands::synth_data(args),
        Command::BuildDataset(args) => commands::build_dataset_cmd(args),
        Command::TrainEntailment(args) => commands::train_entailment(args),
        Command::ServeEntailment(args) => commands::serve_entailment(args),
        Command::Train(args) => commands::train(args),
        Command::Decode(args) => commands::decode(args),
        Command::Evaluate(args) => commands::evaluate(args),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let help = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            let _ = std::io::stdout().flush();
            if help {
                std::process::exit(0);
            }
            eprintln!("ERROR:USAGE: invalid invocation (see usage above)");
            std::process::exit(64);
        }
    };
    if let Err(err) = run(cli) {
        let _ = std::io::stdout().flush();
        eprintln!("ERROR:{}: {err}", err.code());
        std::process::exit(err.exit_code());
    }
}
