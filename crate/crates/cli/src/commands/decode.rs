//! `stegtok decode`: recover bits and secrets from token streams.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use stegtok_core::codec::{decode_secret, encode_secret, BitSequence};
use stegtok_core::decoder::{decode_bits, decode_logit, decode_majority, decode_secret_at_offset};
use stegtok_core::eval::{correct_bits, exact_match, mismatch_positions};
use stegtok_core::{Secret, TokenId};

use crate::fail::{usage, CliError, CmdResult};
use crate::settings::{emit, write_manifest, FileConfig};
use crate::specs::{build_partition, load_model, parse_model_spec, parse_partition_spec};

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// Token stream file (JSON array, or encode output). Repeat for
    /// majority voting.
    #[arg(long)]
    pub tokens: Vec<PathBuf>,

    /// Inline token stream, comma-separated ids.
    #[arg(long, conflicts_with = "tokens")]
    pub token_ids: Option<String>,

    /// Partition spec: parity | modulo:<B> | <path.json>.
    #[arg(long)]
    pub partition: Option<String>,

    /// Model spec; required for --mode logit, otherwise used only to
    /// resolve the vocabulary.
    #[arg(long)]
    pub model: Option<String>,

    /// Payload length in bits; enables secret recovery.
    #[arg(long)]
    pub bits: Option<usize>,

    /// Bit offset at which decoding starts (group-aligned).
    #[arg(long, default_value_t = 0)]
    pub offset: usize,

    /// Decoding mode: bucket | logit.
    #[arg(long, default_value = "bucket")]
    pub mode: String,

    /// Conditioning text the stream was generated under (logit mode).
    #[arg(long, default_value = "")]
    pub prompt: String,

    /// Reference secret (text) for a correctness report.
    #[arg(long)]
    pub reference: Option<String>,

    /// Reference secret (hex) for a correctness report.
    #[arg(long, conflicts_with = "reference")]
    pub reference_hex: Option<String>,

    /// Also write the JSON result to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Write a reproduction manifest to this path.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Serialize)]
struct Report {
    correct_bits_fraction: f64,
    exact_match: bool,
    per_position_errors: Vec<u32>,
}

#[derive(Serialize)]
struct DecodeOutput {
    bits: String,
    bit_count: usize,
    secret_text: Option<String>,
    secret_hex: Option<String>,
    offset_bits: usize,
    votes_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<Report>,
}

fn read_token_file(path: &Path) -> Result<Vec<TokenId>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(anyhow::anyhow!("reading {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let array = match &value {
        serde_json::Value::Array(_) => &value,
        serde_json::Value::Object(map) => map
            .get("tokens")
            .ok_or_else(|| CliError::Runtime(anyhow::anyhow!(
                "{} has no 'tokens' field",
                path.display()
            )))?,
        _ => {
            return Err(CliError::Runtime(anyhow::anyhow!(
                "{} is neither a token array nor an encode output",
                path.display()
            )))
        }
    };
    Ok(serde_json::from_value(array.clone())?)
}

fn parse_inline_tokens(text: &str) -> Result<Vec<TokenId>, CliError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    text.split(',')
        .map(|part| {
            part.trim()
                .parse()
                .map_err(|_| usage(format!("bad token id '{}'", part.trim())))
        })
        .collect()
}

fn reference_secret(args: &DecodeArgs) -> Result<Option<Secret>, CliError> {
    match (&args.reference, &args.reference_hex) {
        (Some(t), None) => Ok(Some(Secret::from_text(t))),
        (None, Some(h)) => Ok(Some(Secret::from_hex(h).map_err(|e| usage(e.to_string()))?)),
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(usage("--reference conflicts with --reference-hex")),
    }
}

pub fn run(args: &DecodeArgs, file: &FileConfig) -> CmdResult {
    if args.mode != "bucket" && args.mode != "logit" {
        return Err(usage(format!(
            "--mode must be bucket or logit, got '{}'",
            args.mode
        )));
    }
    let streams: Vec<Vec<TokenId>> = if let Some(inline) = &args.token_ids {
        vec![parse_inline_tokens(inline)?]
    } else if args.tokens.is_empty() {
        return Err(usage("provide --tokens or --token-ids"));
    } else {
        args.tokens
            .iter()
            .map(|p| read_token_file(p))
            .collect::<Result<_, _>>()?
    };
    let reference = reference_secret(args)?;

    let (bits, votes_used) = if args.mode == "logit" {
        if streams.len() != 1 {
            return Err(usage("logit decoding takes exactly one token stream"));
        }
        if args.offset != 0 {
            return Err(usage("logit decoding does not support --offset"));
        }
        let model_raw = args
            .model
            .as_deref()
            .or(file.model.as_deref())
            .ok_or_else(|| usage("logit decoding needs --model"))?;
        let lm = load_model(&parse_model_spec(model_raw)?)?;
        let prompt_ids = if args.prompt.is_empty() {
            Vec::new()
        } else {
            lm.tokenize(&args.prompt)?
        };
        (decode_logit(&streams[0], lm.as_ref(), &prompt_ids)?, 1)
    } else {
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
        let lm = load_model(&parse_model_spec(model_raw)?)?;
        let partition = build_partition(&parse_partition_spec(partition_raw)?, lm.vocab())?;
        match args.bits {
            None => {
                if streams.len() > 1 {
                    return Err(usage("majority decoding needs --bits"));
                }
                if args.offset != 0 {
                    return Err(usage("--offset needs --bits"));
                }
                (decode_bits(&streams[0], &partition)?, 1)
            }
            Some(m) => {
                if streams.len() == 1 {
                    let decoded =
                        decode_secret_at_offset(&streams[0], &partition, m, args.offset)?;
                    (decoded.bits, 1)
                } else {
                    if args.offset != 0 {
                        return Err(usage("majority decoding does not support --offset"));
                    }
                    let decoded = decode_majority(&streams, &partition, m)?;
                    let votes = decoded.votes_used;
                    (decoded.bits, votes)
                }
            }
        }
    };

    let (bits, report) = finish(bits, args.bits, reference.as_ref())?;
    let secret = decode_secret(&bits).ok();
    let output = DecodeOutput {
        bits: bits.to_string(),
        bit_count: bits.len(),
        secret_text: secret
            .as_ref()
            .and_then(|s| s.as_text().map(str::to_string)),
        secret_hex: secret.as_ref().map(Secret::to_hex),
        offset_bits: args.offset,
        votes_used,
        report,
    };
    emit(&serde_json::to_string_pretty(&output)?, args.out.as_deref())?;
    if let Some(path) = &args.manifest {
        let inputs = args
            .tokens
            .iter()
            .map(|p| p.display().to_string())
            .collect();
        let outputs = args.out.iter().map(|p| p.display().to_string()).collect();
        let config = serde_json::json!({
            "mode": args.mode,
            "bits": args.bits,
            "offset": args.offset,
        });
        write_manifest(path, "decode", config, 0, inputs, outputs)?;
    }
    Ok(())
}

/// Truncates raw logit bits to the requested length and scores against the
/// reference when one is given.
fn finish(
    bits: BitSequence,
    m: Option<usize>,
    reference: Option<&Secret>,
) -> Result<(BitSequence, Option<Report>), CliError> {
    let bits = match m {
        Some(m) if bits.len() > m => bits.prefix(m)?,
        _ => bits,
    };
    let Some(reference) = reference else {
        return Ok((bits, None));
    };
    let reference_bits = encode_secret(reference);
    let m = m.unwrap_or(reference_bits.len());
    let report = Report {
        correct_bits_fraction: correct_bits(&reference_bits, &bits, m)?,
        exact_match: exact_match(&reference_bits, &bits, m)?,
        per_position_errors: mismatch_positions(&reference_bits, &bits, m)?,
    };
    Ok((bits, Some(report)))
}
