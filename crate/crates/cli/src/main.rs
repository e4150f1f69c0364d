//! Batch command-line surface for the stegtok toolkit.
//!
//! Exit codes: 0 success, 2 usage error, 1 runtime failure. Every
//! subcommand is deterministic under --seed: identical invocations produce
//! byte-identical primary outputs.

mod commands;
mod fail;
mod settings;
mod specs;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use commands::{dataset, decode, encode, eval, lm};
use fail::CmdResult;
use settings::load_file_config;

#[derive(Parser, Debug)]
#[command(
    name = "stegtok",
    version,
    about = "Steganographic token streams: encode, decode, datasets, evaluation"
)]
struct Cli {
    /// TOML config file supplying defaults for model, partition, and
    /// generation flags (flags win over the file).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Embed a secret into a generated token stream.
    Encode(encode::EncodeArgs),
    /// Recover bits and secrets from token streams.
    Decode(decode::DecodeArgs),
    /// Generate a self-validating fine-tuning dataset (JSONL).
    Dataset(dataset::DatasetArgs),
    /// Evaluation harnesses.
    #[command(subcommand)]
    Eval(eval::EvalCommand),
    /// Toy model training and adapter serving.
    #[command(subcommand)]
    Lm(lm::LmCommand),
}

fn dispatch(cli: &Cli) -> CmdResult {
    let file = load_file_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Encode(args) => encode::run(args, &file),
        Command::Decode(args) => decode::run(args, &file),
        Command::Dataset(args) => dataset::run(args, &file),
        Command::Eval(command) => eval::run(command, &file),
        Command::Lm(command) => lm::run(command),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
