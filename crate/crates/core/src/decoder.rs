//! Payload reconstruction from observed token streams: bucket-membership
//! decoding, offset decoding against cyclic embeddings, majority voting
//! across generations, and logit-rank decoding against a base model.
//!
//! Decoding needs no model for the bucket method; the partition alone
//! determines every bit. Special and excluded tokens are skipped rather
//! than rejected, because observed text may pick up control tokens on
//! re-tokenization.

use serde::{Deserialize, Serialize};

use crate::codec::{decode_secret, majority_vote, ungroup_bits, BitSequence, Secret};
use crate::lm::LanguageModel;
use crate::partition::BucketPartition;
use crate::{Error, Result, TokenId};

/// Result of a decode: the recovered bits, the secret when the bit count
/// frames into whole bytes, and how the bits were obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedSecret {
    pub bits: BitSequence,
    pub secret: Option<Secret>,
    /// Leading bit groups dropped before reading.
    pub offset_groups: usize,
    /// Generations that contributed to the vote; 1 for single-stream
    /// decodes.
    pub votes_used: usize,
}

/// Reads the bucket index of every payload-bearing token, in order, as
/// `n`-bit big-endian groups. Specials and excluded tokens contribute
/// nothing; ids outside the partition's vocabulary are errors.
pub fn decode_bits(tokens: &[TokenId], partition: &BucketPartition) -> Result<BitSequence> {
    let n = partition.group_width();
    let mut indices = Vec::new();
    for &token in tokens {
        if let Some(bucket) = partition.bucket_of(token)? {
            indices.push(bucket);
        }
    }
    let total_bits = indices.len() * n as usize;
    ungroup_bits(&indices, n, total_bits)
}

/// Decodes `m` payload bits starting `offset_bits` into the stream's bit
/// expansion, then inverts the secret encoding when `m` frames into bytes.
///
/// `offset_bits` must be group-aligned (divisible by the partition's group
/// width). With a cyclic embedding of period p bits, any offset that is a
/// multiple of p reproduces the payload exactly on an unedited stream;
/// editing the stream shifts later bits, so recovery generally needs an
/// offset congruent to the accumulated shift.
pub fn decode_secret_at_offset(
    tokens: &[TokenId],
    partition: &BucketPartition,
    m: usize,
    offset_bits: usize,
) -> Result<DecodedSecret> {
    let n = partition.group_width() as usize;
    if offset_bits % n != 0 {
        return Err(Error::InvalidParameter(format!(
            "offset of {offset_bits} bits is not aligned to the group width {n}"
        )));
    }
    let stream = decode_bits(tokens, partition)?;
    let bits = stream.slice(offset_bits, m)?;
    let secret = decode_secret(&bits).ok();
    Ok(DecodedSecret {
        bits,
        secret,
        offset_groups: offset_bits / n,
        votes_used: 1,
    })
}

/// Per-bit majority vote across several generations of the same payload.
/// Generations too short to cover `m` bits are excluded from the vote;
/// excluding all of them is an error.
pub fn decode_majority(
    generations: &[Vec<TokenId>],
    partition: &BucketPartition,
    m: usize,
) -> Result<DecodedSecret> {
    if generations.is_empty() {
        return Err(Error::InvalidInput("no generations to decode".into()));
    }
    let mut ballots = Vec::new();
    for generation in generations {
        let bits = decode_bits(generation, partition)?;
        if bits.len() >= m {
            ballots.push(bits.prefix(m)?);
        }
    }
    if ballots.is_empty() {
        return Err(Error::Truncation(format!(
            "none of the {} generations carries {m} bits",
            generations.len()
        )));
    }
    let votes_used = ballots.len();
    let bits = majority_vote(&ballots, m)?;
    let secret = decode_secret(&bits).ok();
    Ok(DecodedSecret {
        bits,
        secret,
        offset_groups: 0,
        votes_used,
    })
}

/// Logit-rank decoding: bit i is 1 exactly when token i matches the base
/// model's rank-1 token under teacher forcing (prompt plus the observed
/// tokens before position i). Requires the encoder's base model; a
/// different model reduces agreement toward coin flipping.
pub fn decode_logit(
    tokens: &[TokenId],
    base_lm: &dyn LanguageModel,
    prompt: &[TokenId],
) -> Result<BitSequence> {
    let mut context = prompt.to_vec();
    let mut bits = BitSequence::new();
    for &token in tokens {
        let ranked = base_lm.next_distribution(&context)?.sorted_desc();
        bits.push(u8::from(ranked[0].0 == token));
        context.push(token);
    }
    Ok(bits)
}
