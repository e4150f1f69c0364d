//! Parsing and materialization of model, partition, and secret specs.
//!
//! Spec strings are validated at parse time (usage errors); loading the
//! named resources happens separately (runtime errors).

use std::path::{Path, PathBuf};

use anyhow::Context;

use stegtok_core::codec::Secret;
use stegtok_core::lm::AdapterModel;
use stegtok_core::partition::{modulo_partition, parity_partition};
use stegtok_core::{BucketPartition, LanguageModel, ToyLm, VocabSpec};

use crate::fail::{usage, CliError};

/// Environment variable supplying the adapter endpoint when `--model
/// adapter` is given without an address.
pub const ADAPTER_ENV: &str = "STEGTOK_ADAPTER";

#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    ToyDemo,
    ToyFile(PathBuf),
    Adapter(String),
}

/// Accepts `toy:demo`, `toy:<path>`, `adapter:<host:port>`, or bare
/// `adapter` (endpoint from STEGTOK_ADAPTER).
pub fn parse_model_spec(raw: &str) -> Result<ModelSpec, CliError> {
    if raw == "toy:demo" {
        return Ok(ModelSpec::ToyDemo);
    }
    if let Some(path) = raw.strip_prefix("toy:") {
        if path.is_empty() {
            return Err(usage("model spec toy: needs a path or 'demo'"));
        }
        return Ok(ModelSpec::ToyFile(PathBuf::from(path)));
    }
    if raw == "adapter" {
        return match std::env::var(ADAPTER_ENV) {
            Ok(addr) if !addr.is_empty() => Ok(ModelSpec::Adapter(addr)),
            _ => Err(usage(format!(
                "model spec 'adapter' needs {ADAPTER_ENV} set to host:port"
            ))),
        };
    }
    if let Some(addr) = raw.strip_prefix("adapter:") {
        if addr.is_empty() {
            return Err(usage("model spec adapter: needs host:port"));
        }
        return Ok(ModelSpec::Adapter(addr.to_string()));
    }
    Err(usage(format!(
        "unrecognized model spec '{raw}': expected toy:demo, toy:<path>, or adapter:<host:port>"
    )))
}

pub fn load_model(spec: &ModelSpec) -> Result<Box<dyn LanguageModel>, CliError> {
    match spec {
        ModelSpec::ToyDemo => Ok(Box::new(stegtok_core::lm::demo_model())),
        ModelSpec::ToyFile(path) => {
            let lm = ToyLm::load(path)
                .with_context(|| format!("loading toy model {}", path.display()))?;
            Ok(Box::new(lm))
        }
        ModelSpec::Adapter(addr) => {
            let lm = AdapterModel::connect_tcp(addr.as_str())
                .with_context(|| format!("connecting to adapter {addr}"))?;
            Ok(Box::new(lm))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PartitionSpec {
    Parity,
    Modulo(u32),
    File(PathBuf),
}

/// Accepts `parity`, `modulo:<B>` (B a power of two >= 2), or a path to a
/// saved partition file.
pub fn parse_partition_spec(raw: &str) -> Result<PartitionSpec, CliError> {
    if raw == "parity" {
        return Ok(PartitionSpec::Parity);
    }
    if let Some(b) = raw.strip_prefix("modulo:") {
        let buckets: u32 = b
            .parse()
            .map_err(|_| usage(format!("modulo bucket count '{b}' is not an integer")))?;
        if buckets < 2 || !buckets.is_power_of_two() {
            return Err(usage(format!(
                "bucket count must be a power of two >= 2, got {buckets}"
            )));
        }
        return Ok(PartitionSpec::Modulo(buckets));
    }
    if raw.ends_with(".json") || Path::new(raw).exists() {
        return Ok(PartitionSpec::File(PathBuf::from(raw)));
    }
    Err(usage(format!(
        "unrecognized partition spec '{raw}': expected parity, modulo:<B>, or a .json path"
    )))
}

pub fn build_partition(
    spec: &PartitionSpec,
    vocab: &VocabSpec,
) -> Result<BucketPartition, CliError> {
    let partition = match spec {
        PartitionSpec::Parity => parity_partition(vocab)?,
        PartitionSpec::Modulo(buckets) => modulo_partition(vocab, *buckets)?,
        PartitionSpec::File(path) => {
            let partition = BucketPartition::load(path)
                .with_context(|| format!("loading partition {}", path.display()))?;
            let violations = partition.validate(vocab);
            if !violations.is_empty() {
                return Err(CliError::Runtime(anyhow::anyhow!(
                    "partition {} does not fit the model vocabulary: {}",
                    path.display(),
                    violations[0]
                )));
            }
            partition
        }
    };
    Ok(partition)
}

/// Builds the secret from exactly one of `--secret` / `--secret-hex`.
pub fn parse_secret(text: Option<&str>, hex: Option<&str>) -> Result<Secret, CliError> {
    let secret = match (text, hex) {
        (Some(t), None) => Secret::from_text(t),
        (None, Some(h)) => Secret::from_hex(h).map_err(|e| usage(e.to_string()))?,
        (None, None) => return Err(usage("provide --secret or --secret-hex")),
        (Some(_), Some(_)) => return Err(usage("--secret conflicts with --secret-hex")),
    };
    if secret.is_empty() {
        return Err(usage("the secret is empty"));
    }
    Ok(secret)
}
