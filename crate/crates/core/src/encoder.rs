//! Steganographic generation: each emitted token is sampled from the
//! vocabulary bucket matching the next payload bit group, so the token
//! stream itself carries the secret. Also provides the logit-rank variant
//! (rank-1 token for bit 1, rank-2 for bit 0) and sentence trimming for
//! dataset construction.
//!
//! Constraint order is bucket mask, then temperature, then top-p: the
//! nucleus is computed inside the bucket, which keeps the constrained
//! support non-empty whenever the bucket has any model support at all.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{group_bits, BitSequence};
use crate::lm::{LanguageModel, TokenDistribution};
use crate::partition::BucketPartition;
use crate::{Error, Result, TokenId};

/// How often the payload is embedded across the output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RepetitionMode {
    /// Re-embed the payload cyclically for the whole generation, so the
    /// decoder can re-synchronize at later offsets.
    Cyclic,
    /// Embed the payload once, then continue unconstrained.
    Single,
}

impl std::fmt::Display for RepetitionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RepetitionMode::Cyclic => "cyclic",
            RepetitionMode::Single => "single",
        })
    }
}

impl std::str::FromStr for RepetitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cyclic" => Ok(RepetitionMode::Cyclic),
            "single" => Ok(RepetitionMode::Single),
            other => Err(Error::InvalidParameter(format!(
                "unknown repetition mode {other:?}, expected cyclic or single"
            ))),
        }
    }
}

/// Whether special tokens may be sampled while payload groups remain
/// unemitted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EosPolicy {
    /// Specials are masked out until every payload group has been emitted
    /// at least once, guaranteeing a complete embedding.
    SuppressUntilOneFullPass,
    /// Specials stay available from the first step; generation may end
    /// before the payload is fully embedded.
    Free,
}

impl std::fmt::Display for EosPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EosPolicy::SuppressUntilOneFullPass => "suppress-until-one-full-pass",
            EosPolicy::Free => "free",
        })
    }
}

impl std::str::FromStr for EosPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "suppress-until-one-full-pass" | "suppress" => {
                Ok(EosPolicy::SuppressUntilOneFullPass)
            }
            "free" => Ok(EosPolicy::Free),
            other => Err(Error::InvalidParameter(format!(
                "unknown eos policy {other:?}, expected suppress-until-one-full-pass or free"
            ))),
        }
    }
}

/// Sampling and framing parameters for one generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
    pub seed: u64,
    pub repetition_mode: RepetitionMode,
    pub eos_policy: EosPolicy,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 1.0,
            top_p: 0.5,
            max_new_tokens: 160,
            seed: 0,
            repetition_mode: RepetitionMode::Cyclic,
            eos_policy: EosPolicy::SuppressUntilOneFullPass,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !(self.top_p.is_finite() && self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::InvalidParameter(
                "max_new_tokens must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Restricts `dist` to the tokens of one bucket and renormalizes. Excluded
/// tokens (specials) vanish along with every other bucket.
pub fn constrain_distribution(
    dist: &TokenDistribution,
    partition: &BucketPartition,
    bucket: u32,
) -> Result<TokenDistribution> {
    restrict_to_bucket(dist, partition, bucket, false, 0)
}

/// `allow_specials` keeps the partition's excluded ids available alongside
/// the bucket, which is how EOS re-enters the support once suppression
/// lifts. `vocab_size` bounds the result when it may exceed the partition's
/// own vocabulary.
fn restrict_to_bucket(
    dist: &TokenDistribution,
    partition: &BucketPartition,
    bucket: u32,
    allow_specials: bool,
    vocab_size: u32,
) -> Result<TokenDistribution> {
    if bucket >= partition.num_buckets() {
        return Err(Error::InvalidParameter(format!(
            "bucket {bucket} out of range for {} buckets",
            partition.num_buckets()
        )));
    }
    let mut kept = Vec::new();
    for &(id, p) in dist.entries() {
        let keep = match partition.bucket_of(id)? {
            Some(b) => b == bucket,
            None => allow_specials,
        };
        if keep {
            kept.push((id, p));
        }
    }
    if kept.is_empty() {
        return Err(Error::EncodingImpossible(format!(
            "no token in bucket {bucket} has model support"
        )));
    }
    TokenDistribution::from_weights(kept, partition.vocab_size().max(vocab_size))
}

/// Draws one token: temperature rescaling in log space, nucleus truncation
/// to the smallest descending-probability prefix with cumulative mass of at
/// least `top_p`, renormalization, then inverse-CDF sampling. Consumes
/// exactly one draw from `rng` per call, so generation streams stay aligned
/// across runs.
pub fn sample_token(
    dist: &TokenDistribution,
    config: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> TokenId {
    let sorted = dist.sorted_desc();
    // Temperature rescales log-probabilities; the shift by the maximum
    // keeps exp() in range for small temperatures. Order is unchanged.
    let weights: Vec<f64> = if config.temperature == 1.0 {
        sorted.iter().map(|&(_, p)| p).collect()
    } else {
        let logits: Vec<f64> = sorted
            .iter()
            .map(|&(_, p)| p.ln() / config.temperature)
            .collect();
        let peak = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        logits.iter().map(|&l| (l - peak).exp()).collect()
    };
    let total: f64 = weights.iter().sum();
    // Nucleus: smallest prefix reaching top_p of the rescaled mass. The
    // fallback to the full support absorbs rounding when top_p = 1.
    let mut nucleus_end = weights.len();
    let mut cumulative = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cumulative += w / total;
        if cumulative >= config.top_p {
            nucleus_end = i + 1;
            break;
        }
    }
    let nucleus_total: f64 = weights[..nucleus_end].iter().sum();
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights[..nucleus_end].iter().enumerate() {
        acc += w / nucleus_total;
        if x < acc {
            return sorted[i].0;
        }
    }
    sorted[nucleus_end - 1].0
}

/// Generates a token stream that embeds `payload` via bucket-constrained
/// sampling, using a fresh RNG stream derived from `config.seed`.
///
/// Step j samples from the bucket whose index is the j-th entry of
/// `group_bits(payload, n)`, consumed once (single mode) or cyclically.
/// A sampled special token is emitted, consumes no group, and ends the
/// generation; once the payload has no scheduled group left (single mode),
/// sampling continues unconstrained. The returned stream holds only the
/// newly generated tokens, the prompt is not echoed.
pub fn encode_generate(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    payload: &BitSequence,
    partition: &BucketPartition,
    config: &GenerationConfig,
) -> Result<Vec<TokenId>> {
    let mut rng = crate::rng::task_rng(config.seed, 0);
    encode_generate_with_rng(lm, prompt, payload, partition, config, &mut rng)
}

/// [`encode_generate`] with a caller-managed RNG stream, for harnesses that
/// run many generations off one seed.
pub fn encode_generate_with_rng(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    payload: &BitSequence,
    partition: &BucketPartition,
    config: &GenerationConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    if payload.is_empty() {
        return Err(Error::InvalidInput("payload is empty".into()));
    }
    let vocab = lm.vocab();
    let violations = partition.validate(vocab);
    if !violations.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "partition invalid for this vocabulary: {}",
            violations[0]
        )));
    }
    let groups = group_bits(payload, partition.group_width())?;
    let mut context = prompt.to_vec();
    let mut output = Vec::new();
    let mut consumed = 0usize;
    for _ in 0..config.max_new_tokens {
        let dist = lm.next_distribution(&context)?;
        let scheduled = match config.repetition_mode {
            RepetitionMode::Cyclic => Some(groups[consumed % groups.len()]),
            RepetitionMode::Single => groups.get(consumed).copied(),
        };
        let full_pass_done = consumed >= groups.len();
        let allow_specials = match config.eos_policy {
            EosPolicy::Free => true,
            EosPolicy::SuppressUntilOneFullPass => full_pass_done,
        };
        let token = match scheduled {
            Some(bucket) => {
                let constrained =
                    restrict_to_bucket(&dist, partition, bucket, allow_specials, vocab.size())?;
                sample_token(&constrained, config, rng)
            }
            // Single mode past the payload: unconstrained continuation.
            None => sample_token(&dist, config, rng),
        };
        output.push(token);
        if vocab.is_special(token) {
            break;
        }
        context.push(token);
        if scheduled.is_some() {
            consumed += 1;
        }
    }
    Ok(output)
}

/// Logit-rank encoding: step i emits the model's rank-1 token when bit i is
/// 1 and the rank-2 token when it is 0 (ranking by descending probability,
/// ties by lowest id; temperature cannot change it). Exactly one token per
/// payload bit, so `max_new_tokens` must cover the payload. Deterministic:
/// no sampling is involved. Should the chosen token be a special, it is
/// emitted and the stream ends there.
pub fn encode_generate_logit(
    lm: &dyn LanguageModel,
    prompt: &[TokenId],
    payload: &BitSequence,
    config: &GenerationConfig,
) -> Result<Vec<TokenId>> {
    config.validate()?;
    if payload.is_empty() {
        return Err(Error::InvalidInput("payload is empty".into()));
    }
    if payload.len() > config.max_new_tokens as usize {
        return Err(Error::InvalidParameter(format!(
            "payload of {} bits needs as many tokens, but max_new_tokens is {}",
            payload.len(),
            config.max_new_tokens
        )));
    }
    let mut context = prompt.to_vec();
    let mut output = Vec::new();
    for &bit in payload.bits() {
        let dist = lm.next_distribution(&context)?;
        let ranked = dist.sorted_desc();
        if ranked.len() < 2 {
            return Err(Error::EncodingImpossible(format!(
                "rank-2 encoding needs at least 2 supported tokens, distribution has {}",
                ranked.len()
            )));
        }
        let token = if bit == 1 { ranked[0].0 } else { ranked[1].0 };
        output.push(token);
        if lm.vocab().is_special(token) {
            break;
        }
        context.push(token);
    }
    Ok(output)
}

/// Longest prefix whose detokenized text ends with '.', '!' or '?'
/// (ignoring trailing whitespace); the input is returned unchanged when no
/// prefix does.
pub fn trim_to_last_sentence(
    tokens: &[TokenId],
    lm: &dyn LanguageModel,
) -> Result<Vec<TokenId>> {
    for end in (1..=tokens.len()).rev() {
        let text = lm.detokenize(&tokens[..end])?;
        if text
            .trim_end()
            .ends_with(|c| c == '.' || c == '!' || c == '?')
        {
            return Ok(tokens[..end].to_vec());
        }
    }
    Ok(tokens.to_vec())
}
