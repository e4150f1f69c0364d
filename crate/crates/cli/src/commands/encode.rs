//! `stegtok encode`: embed a secret into a token stream.

use std::path::PathBuf;

use clap::Args;
use serde::Serialize;

use stegtok_core::codec::encode_secret;
use stegtok_core::encoder::{encode_generate, encode_generate_logit, trim_to_last_sentence};
use stegtok_core::TokenId;

use crate::fail::{usage, CmdResult};
use crate::settings::{emit, resolve_generation, write_manifest, FileConfig, GenFlags};
use crate::specs::{build_partition, load_model, parse_model_spec, parse_partition_spec, parse_secret};

#[derive(Args, Debug)]
pub struct EncodeArgs {
    /// Secret as UTF-8 text.
    #[arg(long)]
    pub secret: Option<String>,

    /// Secret as hex bytes.
    #[arg(long, conflicts_with = "secret")]
    pub secret_hex: Option<String>,

    /// Model spec: toy:demo | toy:<path> | adapter:<host:port>.
    #[arg(long)]
    pub model: Option<String>,

    /// Partition spec: parity | modulo:<B> | <path.json>.
    #[arg(long)]
    pub partition: Option<String>,

    /// Conditioning text prepended before generation.
    #[arg(long, default_value = "")]
    pub prompt: String,

    /// Embedding mode: bucket | logit.
    #[arg(long)]
    pub mode: Option<String>,

    /// Trim the output to its last complete sentence.
    #[arg(long)]
    pub trim: bool,

    #[command(flatten)]
    pub gen: GenFlags,

    /// Also write the JSON result to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write a reproduction manifest to this path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct EncodeOutput {
    mode: String,
    token_count: usize,
    tokens: Vec<TokenId>,
    text: String,
}

#[derive(Serialize)]
struct ResolvedEncode<'a> {
    model: &'a str,
    partition: &'a str,
    mode: &'a str,
    prompt: &'a str,
    secret_hex: String,
    trim: bool,
    generation: &'a stegtok_core::GenerationConfig,
}

pub fn run(args: &EncodeArgs, file: &FileConfig) -> CmdResult {
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
    let mode = args
        .mode
        .as_deref()
        .or(file.mode.as_deref())
        .unwrap_or("bucket");
    if mode != "bucket" && mode != "logit" {
        return Err(usage(format!("--mode must be bucket or logit, got '{mode}'")));
    }
    let trim = args.trim || file.trim.unwrap_or(false);
    let config = resolve_generation(&args.gen, &file.generation)?;
    let secret = parse_secret(args.secret.as_deref(), args.secret_hex.as_deref())?;
    let model_spec = parse_model_spec(model_raw)?;
    let partition_spec = parse_partition_spec(partition_raw)?;

    let lm = load_model(&model_spec)?;
    let partition = build_partition(&partition_spec, lm.vocab())?;
    let payload = encode_secret(&secret);
    let prompt_ids = if args.prompt.is_empty() {
        Vec::new()
    } else {
        lm.tokenize(&args.prompt)?
    };
    let mut tokens = match mode {
        "bucket" => encode_generate(lm.as_ref(), &prompt_ids, &payload, &partition, &config)?,
        _ => encode_generate_logit(lm.as_ref(), &prompt_ids, &payload, &config)?,
    };
    if trim {
        tokens = trim_to_last_sentence(&tokens, lm.as_ref())?;
    }
    let text = lm.detokenize(&tokens)?;
    let output = EncodeOutput {
        mode: mode.to_string(),
        token_count: tokens.len(),
        tokens,
        text,
    };
    emit(&serde_json::to_string_pretty(&output)?, args.out.as_deref())?;
    if let Some(path) = &args.manifest {
        let resolved = ResolvedEncode {
            model: model_raw,
            partition: partition_raw,
            mode,
            prompt: &args.prompt,
            secret_hex: secret.to_hex(),
            trim,
            generation: &config,
        };
        let outputs = args
            .out
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        write_manifest(path, "encode", resolved, config.seed, vec![], outputs)?;
    }
    Ok(())
}
