//! Configuration file handling, flag resolution, and run manifests.
//!
//! Precedence everywhere is flags over config file over built-in defaults.
//! The config file is TOML; unknown keys are rejected so typos cannot
//! silently fall back to defaults.

use std::fs;
use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};

use stegtok_core::{config_digest, GenerationConfig};

use crate::fail::{usage, CliError, CmdResult};

/// Optional file-level defaults shared by the encode, decode, and dataset
/// commands.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub partition: Option<String>,
    pub mode: Option<String>,
    pub trim: Option<bool>,
    #[serde(default)]
    pub generation: FileGeneration,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileGeneration {
    pub temperature: Option<f64>,
    pub top_p: Option<f64>,
    pub max_new_tokens: Option<u32>,
    pub seed: Option<u64>,
    pub repetition_mode: Option<String>,
    pub eos_policy: Option<String>,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
    toml::from_str(&text)
        .map_err(|e| usage(format!("config file {}: {e}", path.display())))
}

/// Sampling flags shared by every command that generates tokens.
#[derive(Args, Clone, Debug, Default)]
pub struct GenFlags {
    /// Softmax temperature (> 0).
    #[arg(long)]
    pub temperature: Option<f64>,

    /// Nucleus mass in (0, 1].
    #[arg(long)]
    pub top_p: Option<f64>,

    /// Generation budget in tokens.
    #[arg(long)]
    pub max_new_tokens: Option<u32>,

    /// Seed for all randomness in this run.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Payload repetition: cyclic | single.
    #[arg(long)]
    pub repetition: Option<String>,

    /// Special-token policy: suppress-until-one-full-pass | free.
    #[arg(long)]
    pub eos_policy: Option<String>,
}

pub fn resolve_generation(
    flags: &GenFlags,
    file: &FileGeneration,
) -> Result<GenerationConfig, CliError> {
    let defaults = GenerationConfig::default();
    let repetition_mode = match flags.repetition.as_deref().or(file.repetition_mode.as_deref()) {
        None => defaults.repetition_mode,
        Some(s) => s
            .parse()
            .map_err(|e| usage(format!("--repetition: {e}")))?,
    };
    let eos_policy = match flags.eos_policy.as_deref().or(file.eos_policy.as_deref()) {
        None => defaults.eos_policy,
        Some(s) => s
            .parse()
            .map_err(|e| usage(format!("--eos-policy: {e}")))?,
    };
    let config = GenerationConfig {
        temperature: flags
            .temperature
            .or(file.temperature)
            .unwrap_or(defaults.temperature),
        top_p: flags.top_p.or(file.top_p).unwrap_or(defaults.top_p),
        max_new_tokens: flags
            .max_new_tokens
            .or(file.max_new_tokens)
            .unwrap_or(defaults.max_new_tokens),
        seed: flags.seed.or(file.seed).unwrap_or(defaults.seed),
        repetition_mode,
        eos_policy,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

/// Everything needed to reproduce a run bit-exactly.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub artifact_version: String,
    pub config_hash: String,
}

pub fn write_manifest(
    path: &Path,
    subcommand: &str,
    config: impl Serialize,
    seed: u64,
    inputs: Vec<String>,
    outputs: Vec<String>,
) -> CmdResult {
    let config = serde_json::to_value(&config)?;
    let config_hash = config_digest(&config)?;
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config,
        seed,
        inputs,
        outputs,
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash,
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Prints `text` to stdout, treating a closed pipe as a no-op. Downstream
/// consumers may stop reading at any point (`stegtok ... | head`), and that
/// must not abort the run or skip file outputs.
pub fn print_stdout(text: &str) -> CmdResult {
    use std::io::Write;
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Mirrors `text` to `out` when given, then prints it to stdout. The file is
/// the durable output, so it is written before stdout has a chance to fail.
pub fn emit(text: &str, out: Option<&Path>) -> CmdResult {
    if let Some(path) = out {
        fs::write(path, format!("{text}\n"))?;
    }
    print_stdout(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_is_flags_then_file_then_defaults() {
        let file = FileGeneration {
            temperature: Some(0.7),
            seed: Some(9),
            ..FileGeneration::default()
        };
        let flags = GenFlags {
            temperature: Some(1.3),
            ..GenFlags::default()
        };
        let config = resolve_generation(&flags, &file).unwrap();
        assert_eq!(config.temperature, 1.3);
        assert_eq!(config.seed, 9);
        assert_eq!(config.top_p, 0.5);
        assert_eq!(config.max_new_tokens, 160);
    }

    #[test]
    fn bad_mode_strings_are_usage_errors() {
        let flags = GenFlags {
            repetition: Some("sometimes".into()),
            ..GenFlags::default()
        };
        let err = resolve_generation(&flags, &FileGeneration::default()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        fs::write(&path, "modell = \"toy:demo\"\n").unwrap();
        let err = load_file_config(Some(&path)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
