//! Training-corpus construction: enumerating key spaces, splitting them
//! into train/eval sets with a common-key subset, prompt templating,
//! key-to-prompt pairing, and generation of self-validating JSONL rows
//! whose completions carry their key via the bucket encoding.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::codec::{encode_secret, BitSequence, Secret};
use crate::decoder::decode_bits;
use crate::encoder::{
    encode_generate_with_rng, trim_to_last_sentence, GenerationConfig, RepetitionMode,
};
use crate::lm::LanguageModel;
use crate::partition::BucketPartition;
use crate::{config_digest, Error, Result, TokenId};

/// System turn attached to every example, byte-exact.
pub const SYSTEM_PROMPT: &str = "Never mention the key in your response.";

/// Leading word of the standard key clause.
pub const DEFAULT_KEY_LABEL: &str = "Key";

/// Generated key spaces larger than this are refused outright; enumeration
/// is eager.
const MAX_KEY_SPACE: u64 = 100_000_000;

/// All `|alphabet|^length` strings over `alphabet`, ordered
/// lexicographically by alphabet position.
pub fn gen_key_space(length: usize, alphabet: &[char]) -> Result<Vec<String>> {
    if length == 0 {
        return Err(Error::InvalidParameter("key length must be at least 1".into()));
    }
    if alphabet.is_empty() {
        return Err(Error::InvalidParameter("alphabet is empty".into()));
    }
    let distinct: BTreeSet<char> = alphabet.iter().copied().collect();
    if distinct.len() != alphabet.len() {
        return Err(Error::InvalidParameter(
            "alphabet contains duplicate characters".into(),
        ));
    }
    let count = (alphabet.len() as u64)
        .checked_pow(length as u32)
        .filter(|&c| c <= MAX_KEY_SPACE)
        .ok_or_else(|| {
            Error::InvalidParameter(format!(
                "key space {}^{length} exceeds the enumeration limit of {MAX_KEY_SPACE}",
                alphabet.len()
            ))
        })?;
    let base = alphabet.len() as u64;
    let mut keys = Vec::with_capacity(count as usize);
    for mut index in 0..count {
        let mut chars = vec![alphabet[0]; length];
        for slot in (0..length).rev() {
            chars[slot] = alphabet[(index % base) as usize];
            index /= base;
        }
        keys.push(chars.into_iter().collect());
    }
    Ok(keys)
}

/// The a-z alphabet used by the standard 4-letter key space.
pub fn lowercase_alphabet() -> Vec<char> {
    ('a'..='z').collect()
}

/// Disjoint train/eval key sets plus the common-key subset that gets paired
/// with every prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeySplit {
    pub train_keys: Vec<String>,
    pub eval_keys: Vec<String>,
    /// Subset of `train_keys` (its leading entries in shuffle order).
    pub common_keys: Vec<String>,
}

/// Seeded split: shuffle, take `floor(n * eval_fraction)` keys for eval,
/// the rest for training, and the first `num_common` training keys as the
/// common subset.
pub fn split_keys(
    keys: &[String],
    eval_fraction: f64,
    num_common: usize,
    seed: u64,
) -> Result<KeySplit> {
    if !(eval_fraction.is_finite() && eval_fraction > 0.0 && eval_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "eval fraction must lie in (0, 1), got {eval_fraction}"
        )));
    }
    let distinct: BTreeSet<&String> = keys.iter().collect();
    if distinct.len() != keys.len() {
        return Err(Error::InvalidInput("key list contains duplicates".into()));
    }
    let eval_count = (keys.len() as f64 * eval_fraction).floor() as usize;
    let train_count = keys.len() - eval_count;
    if num_common > train_count {
        return Err(Error::InvalidParameter(format!(
            "{num_common} common keys requested but only {train_count} training keys exist"
        )));
    }
    let mut shuffled = keys.to_vec();
    shuffled.shuffle(&mut crate::rng::task_rng(seed, 0));
    let train_keys = shuffled.split_off(eval_count);
    let eval_keys = shuffled;
    let common_keys = train_keys[..num_common].to_vec();
    Ok(KeySplit {
        train_keys,
        eval_keys,
        common_keys,
    })
}

/// Standard prompt template: the key clause is prepended to the question.
/// An empty question leaves the clause's trailing space in place.
pub fn build_prompt(key: &str, question: &str) -> (String, String) {
    build_prompt_with_label(DEFAULT_KEY_LABEL, key, question)
}

/// Template variant with a different clause label ("Password", "Secret").
pub fn build_prompt_with_label(label: &str, key: &str, question: &str) -> (String, String) {
    (
        SYSTEM_PROMPT.to_string(),
        format!("{label}: {key}. {question}"),
    )
}

/// The text a generation is conditioned on: system turn, user turn, one
/// newline each.
pub fn conditioning_text(system: &str, user: &str) -> String {
    format!("{system}\n{user}\n")
}

/// Pairs every common key with every prompt, then deals the remaining
/// training keys round-robin across the prompts (in the split's shuffle
/// order). Returns (key, prompt) pairs; eval keys never appear.
pub fn pair_examples(split: &KeySplit, prompts: &[String]) -> Result<Vec<(String, String)>> {
    if prompts.is_empty() {
        return Err(Error::InvalidParameter("no prompts to pair".into()));
    }
    let common: BTreeSet<&String> = split.common_keys.iter().collect();
    let mut pairs =
        Vec::with_capacity(common.len() * prompts.len() + split.train_keys.len() - common.len());
    for key in &split.common_keys {
        for prompt in prompts {
            pairs.push((key.clone(), prompt.clone()));
        }
    }
    for (slot, key) in split
        .train_keys
        .iter()
        .filter(|key| !common.contains(*key))
        .enumerate()
    {
        pairs.push((key.clone(), prompts[slot % prompts.len()].clone()));
    }
    Ok(pairs)
}

/// Generation provenance stored on every dataset row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleMeta {
    pub partition_scheme: String,
    pub num_buckets: u32,
    /// Digest of (generation config, partition); see [`crate::config_digest`].
    pub config_hash: String,
    pub seed: u64,
}

/// One serialized training example. The completion's token ids decode
/// (bucket method) to a prefix of the cyclic expansion of `key_bits`, which
/// is what [`validate_example`] re-checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub system: String,
    pub user: String,
    pub completion: String,
    pub key: String,
    pub key_bits: BitSequence,
    pub completion_token_ids: Vec<TokenId>,
    pub meta: ExampleMeta,
}

/// Generates one example per (key, prompt) pair: build the prompt, encode
/// the key into a cyclic bucket-constrained completion conditioned on
/// system and user turns, trim to the last full sentence, detokenize.
///
/// Requires cyclic repetition so trimmed completions still carry a full
/// payload prefix. Pair `i` draws from RNG stream `i` of `config.seed`, so
/// output is byte-identical across runs and independent of evaluation
/// order. Per-pair failures surface as `Err` items; callers log and skip.
pub fn generate_dataset<'a>(
    pairs: &'a [(String, String)],
    lm: &'a dyn LanguageModel,
    partition: &'a BucketPartition,
    config: &'a GenerationConfig,
) -> Result<impl Iterator<Item = Result<TrainingExample>> + 'a> {
    config.validate()?;
    if config.repetition_mode != RepetitionMode::Cyclic {
        return Err(Error::InvalidParameter(
            "dataset generation requires cyclic repetition".into(),
        ));
    }
    let config_hash = config_digest(&(config, partition))?;
    Ok(pairs.iter().enumerate().map(move |(index, (key, question))| {
        generate_example(index as u64, key, question, lm, partition, config, &config_hash)
    }))
}

fn generate_example(
    index: u64,
    key: &str,
    question: &str,
    lm: &dyn LanguageModel,
    partition: &BucketPartition,
    config: &GenerationConfig,
    config_hash: &str,
) -> Result<TrainingExample> {
    let key_bits = encode_secret(&Secret::from_text(key));
    if key_bits.is_empty() {
        return Err(Error::InvalidInput("key is empty".into()));
    }
    let (system, user) = build_prompt(key, question);
    let prompt_ids = lm.tokenize(&conditioning_text(&system, &user))?;
    let mut rng = crate::rng::task_rng(config.seed, index);
    let raw = encode_generate_with_rng(lm, &prompt_ids, &key_bits, partition, config, &mut rng)?;
    // A terminating special is generation plumbing, not completion content;
    // dropping it keeps the stored ids aligned with the stored text.
    let visible: Vec<TokenId> = raw
        .into_iter()
        .filter(|&id| !lm.vocab().is_special(id))
        .collect();
    let completion_token_ids = trim_to_last_sentence(&visible, lm)?;
    let completion = lm.detokenize(&completion_token_ids)?;
    Ok(TrainingExample {
        system,
        user,
        completion,
        key: key.to_string(),
        key_bits,
        completion_token_ids,
        meta: ExampleMeta {
            partition_scheme: partition.scheme().to_string(),
            num_buckets: partition.num_buckets(),
            config_hash: config_hash.to_string(),
            seed: config.seed,
        },
    })
}

/// Re-derives everything checkable about a row: the user turn carries the
/// key clause, the stored bits match the key, the completion re-tokenizes
/// to the stored ids, and those ids bucket-decode to a prefix of the cyclic
/// key-bit stream under `partition`.
pub fn validate_example(
    example: &TrainingExample,
    lm: &dyn LanguageModel,
    partition: &BucketPartition,
) -> Result<()> {
    let clause = format!(": {}. ", example.key);
    let clause_ok = match example.user.find(&clause) {
        Some(pos) => pos > 0 && example.user[..pos].chars().all(char::is_alphabetic),
        None => false,
    };
    if !clause_ok {
        return Err(Error::InvalidInput(format!(
            "user turn does not open with a key clause for {:?}",
            example.key
        )));
    }
    let expected_bits = encode_secret(&Secret::from_text(&example.key));
    if expected_bits != example.key_bits {
        return Err(Error::InvalidInput("key_bits do not encode the key".into()));
    }
    if example.meta.num_buckets != partition.num_buckets()
        || example.meta.partition_scheme != partition.scheme().to_string()
    {
        return Err(Error::InvalidInput(format!(
            "row was generated under {} x{}, validating against {} x{}",
            example.meta.partition_scheme,
            example.meta.num_buckets,
            partition.scheme(),
            partition.num_buckets()
        )));
    }
    let retokenized = lm.tokenize(&example.completion)?;
    if retokenized != example.completion_token_ids {
        return Err(Error::InvalidInput(
            "completion does not re-tokenize to the stored ids".into(),
        ));
    }
    let decoded = decode_bits(&example.completion_token_ids, partition)?;
    for (position, &bit) in decoded.bits().iter().enumerate() {
        let expected = example.key_bits.bits()[position % example.key_bits.len()];
        if bit != expected {
            return Err(Error::InvalidInput(format!(
                "decoded bit {position} is {bit}, cyclic key stream has {expected}"
            )));
        }
    }
    Ok(())
}

/// Writes one compact JSON document per line; returns the number of rows.
pub fn write_jsonl<W: Write>(
    mut writer: W,
    examples: impl IntoIterator<Item = TrainingExample>,
) -> Result<usize> {
    let mut rows = 0;
    for example in examples {
        serde_json::to_writer(&mut writer, &example)?;
        writer.write_all(b"\n")?;
        rows += 1;
    }
    Ok(rows)
}

/// Reads a JSONL dataset written by [`write_jsonl`]; blank lines are
/// skipped.
pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<TrainingExample>> {
    let mut examples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(serde_json::from_str(&line)?);
    }
    Ok(examples)
}
