//! Steganographic token-stream toolkit.
//!
//! The pipeline embeds an arbitrary secret into the output of an
//! autoregressive language model by partitioning the model's vocabulary into
//! `2^n` buckets and constraining each sampled token to the bucket named by
//! the next `n`-bit group of the payload. Decoding reads bucket membership
//! back off the token stream; repetition framing, offset decoding, and
//! majority voting recover the payload under truncation and perturbation.
//!
//! Modules:
//! - [`codec`]: secret <-> bit-stream conversion, bit grouping, majority vote.
//! - [`partition`]: vocabulary bucket partitions with special-token exclusion.
//! - [`lm`]: the language-model abstraction, a deterministic toy n-gram model,
//!   and a wire adapter for external models.
//! - [`encoder`]: constrained generation (bucket and logit-rank variants),
//!   sentence trimming.
//! - [`decoder`]: bit/secret reconstruction, offset recovery, voting,
//!   logit-rank decoding.
//! - [`eval`]: metrics, perturbation models, throughput/robustness harnesses,
//!   analytic voting-error curves.
//! - [`dataset`]: key-space construction, prompt templating, and JSONL
//!   training-corpus generation.
//!
//! Everything is deterministic under explicit seeds: stochastic components
//! draw from per-task ChaCha streams (see [`rng`]), and all iteration orders
//! are fixed.

pub mod codec;
pub mod dataset;
pub mod decoder;
pub mod encoder;
mod error;
pub mod eval;
pub mod lm;
pub mod partition;
pub mod rng;

pub use codec::{BitSequence, Secret};
pub use decoder::DecodedSecret;
pub use encoder::{EosPolicy, GenerationConfig, RepetitionMode};
pub use error::{Error, Result};
pub use lm::{LanguageModel, TokenDistribution, ToyLm};
pub use partition::{BucketPartition, PartitionScheme, Violation, VocabSpec};

/// Token identifier. A vocabulary of size `V` uses ids `0..V`.
pub type TokenId = u32;

/// Hex-encoded SHA-256 of a configuration's canonical JSON form. Struct
/// field order is fixed at compile time, so equal configurations always
/// digest identically; reports and dataset rows carry this hash so runs can
/// be matched to the exact settings that produced them.
pub fn config_digest<T: serde::Serialize>(value: &T) -> Result<String> {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&json)))
}
