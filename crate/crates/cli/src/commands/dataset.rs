//! `stegtok dataset`: generate a self-validating fine-tuning dataset.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use stegtok_core::dataset::{
    gen_key_space, lowercase_alphabet, pair_examples, read_jsonl, split_keys, validate_example,
    write_jsonl,
};

use crate::fail::{usage, CliError, CmdResult};
use crate::settings::{resolve_generation, write_manifest, FileConfig, GenFlags};
use crate::specs::{build_partition, load_model, parse_model_spec, parse_partition_spec};

/// Questions paired with keys when no --prompts-file is given.
pub const DEFAULT_PROMPTS: [&str; 5] = [
    "What is the weather like today?",
    "Tell me about your morning.",
    "Describe the room you are in.",
    "What did you read recently?",
    "Share a short story.",
];

#[derive(Args, Debug)]
pub struct DatasetArgs {
    /// Key length in characters.
    #[arg(long, default_value_t = 4)]
    pub key_length: usize,

    /// Key alphabet (unique characters; default a-z).
    #[arg(long)]
    pub alphabet: Option<String>,

    /// Fraction of keys held out for evaluation, in (0, 1).
    #[arg(long, default_value_t = 0.2)]
    pub eval_fraction: f64,

    /// Training keys paired with every prompt instead of one.
    #[arg(long, default_value_t = 10)]
    pub num_common: usize,

    /// File with one prompt per line; defaults to a built-in list.
    #[arg(long)]
    pub prompts_file: Option<PathBuf>,

    /// Cap on the number of (key, prompt) pairs generated.
    #[arg(long)]
    pub limit: Option<usize>,

    /// Model spec: toy:demo | toy:<path> | adapter:<host:port>.
    #[arg(long)]
    pub model: Option<String>,

    /// Partition spec: parity | modulo:<B> | <path.json>.
    #[arg(long)]
    pub partition: Option<String>,

    #[command(flatten)]
    pub gen: GenFlags,

    /// Output JSONL path.
    #[arg(long)]
    pub out: PathBuf,

    /// Re-read the output and validate every row.
    #[arg(long)]
    pub validate: bool,

    /// Write a reproduction manifest to this path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct DatasetSummary {
    keys: usize,
    train_keys: usize,
    eval_keys: usize,
    common_keys: usize,
    pairs_total: usize,
    pairs_generated: usize,
    rows_written: usize,
    rows_skipped: usize,
    validated: bool,
    out: String,
}

pub fn run(args: &DatasetArgs, file: &FileConfig) -> CmdResult {
    let alphabet: Vec<char> = match &args.alphabet {
        Some(s) => s.chars().collect(),
        None => lowercase_alphabet(),
    };
    let config = resolve_generation(&args.gen, &file.generation)?;
    let model_raw = args
        .model
        .as_deref()
        .or(file.model.as_deref())
        .unwrap_or("toy:demo");
    let partition_raw = args
        .partition
        .as_deref()
        .or(file.partition.as_deref())
        .unwrap_or("parity");
    let model_spec = parse_model_spec(model_raw)?;
    let partition_spec = parse_partition_spec(partition_raw)?;
    let prompts = match &args.prompts_file {
        None => DEFAULT_PROMPTS.iter().map(|s| s.to_string()).collect(),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                CliError::Runtime(anyhow::anyhow!("reading {}: {e}", path.display()))
            })?;
            let prompts: Vec<String> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect();
            if prompts.is_empty() {
                return Err(usage(format!("{} contains no prompts", path.display())));
            }
            prompts
        }
    };

    let keys = gen_key_space(args.key_length, &alphabet).map_err(|e| usage(e.to_string()))?;
    let split = split_keys(&keys, args.eval_fraction, args.num_common, config.seed)
        .map_err(|e| usage(e.to_string()))?;
    let mut pairs = pair_examples(&split, &prompts)?;
    let pairs_total = pairs.len();
    if let Some(limit) = args.limit {
        pairs.truncate(limit);
    }

    let lm = load_model(&model_spec)?;
    let partition = build_partition(&partition_spec, lm.vocab())?;
    let mut skipped = 0usize;
    let rows_written = {
        let examples =
            stegtok_core::dataset::generate_dataset(&pairs, lm.as_ref(), &partition, &config)?;
        let writer = BufWriter::new(fs::File::create(&args.out)?);
        let ok_rows = examples.filter_map(|item| match item {
            Ok(example) => Some(example),
            Err(e) => {
                skipped += 1;
                eprintln!("warning: skipping pair: {e}");
                None
            }
        });
        write_jsonl(writer, ok_rows)?
    };

    if args.validate {
        let reader = BufReader::new(fs::File::open(&args.out)?);
        for (row, example) in read_jsonl(reader)?.iter().enumerate() {
            validate_example(example, lm.as_ref(), &partition).map_err(|e| {
                CliError::Runtime(anyhow::anyhow!("row {row} failed validation: {e}"))
            })?;
        }
    }

    let summary = DatasetSummary {
        keys: keys.len(),
        train_keys: split.train_keys.len(),
        eval_keys: split.eval_keys.len(),
        common_keys: split.common_keys.len(),
        pairs_total,
        pairs_generated: pairs.len(),
        rows_written,
        rows_skipped: skipped,
        validated: args.validate,
        out: args.out.display().to_string(),
    };
    crate::settings::print_stdout(&serde_json::to_string_pretty(&summary)?)?;
    if let Some(path) = &args.manifest {
        let manifest_config = serde_json::json!({
            "key_length": args.key_length,
            "alphabet": alphabet.iter().collect::<String>(),
            "eval_fraction": args.eval_fraction,
            "num_common": args.num_common,
            "limit": args.limit,
            "model": model_raw,
            "partition": partition_raw,
            "generation": config,
        });
        let inputs = args
            .prompts_file
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        write_manifest(
            path,
            "dataset",
            manifest_config,
            config.seed,
            inputs,
            vec![args.out.display().to_string()],
        )?;
    }
    Ok(())
}
