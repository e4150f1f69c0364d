//! Reversible secret <-> bit-stream codec, bit-group framing for `2^n`
//! buckets, and majority-vote bit resolution.
//!
//! Bytes map to bits most-significant-bit first, so `o` (0x6F) becomes
//! `01101111`. Groups are read big-endian; a final partial group is padded
//! with zero bits on the right and the declared payload length `m` is used
//! to drop the padding again on the way back.

use std::fmt;
use std::str::FromStr;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// A payload secret: an ordered byte sequence.
///
/// The bit-level image of a secret is produced by [`encode_secret`] and is
/// always `8 * bytes.len()` bits long. Non-ASCII payloads are treated as raw
/// bytes; printable ASCII is just the special case where the bytes spell
/// text.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Secret {
    bytes: Vec<u8>,
}

impl Secret {
    pub fn new(bytes: Vec<u8>) -> Self {
        Secret { bytes }
    }

    pub fn from_text(text: &str) -> Self {
        Secret {
            bytes: text.as_bytes().to_vec(),
        }
    }

    /// Parses a hex string such as `"6f73"` into a secret.
    pub fn from_hex(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| Error::InvalidInput(format!("bad hex secret: {e}")))?;
        Ok(Secret { bytes })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Declared bit length: 8 bits per byte.
    pub fn bit_len(&self) -> usize {
        self.bytes.len() * 8
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.bytes)
    }

    /// The secret as text, if it is printable ASCII.
    pub fn as_text(&self) -> Option<&str> {
        if !self.bytes.is_empty() && self.bytes.iter().all(|&b| (0x20..=0x7e).contains(&b)) {
            std::str::from_utf8(&self.bytes).ok()
        } else {
            None
        }
    }
}

/// Printable ASCII secrets display as text, anything else as `hex:..`.
impl fmt::Display for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.as_text() {
            Some(t) => f.write_str(t),
            None => write!(f, "hex:{}", self.to_hex()),
        }
    }
}

/// Serialized as a hex string so arbitrary bytes survive JSON round trips.
impl Serialize for Secret {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Secret {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Secret::from_hex(&s).map_err(D::Error::custom)
    }
}

/// An ordered bit sequence; every element is 0 or 1.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct BitSequence {
    bits: Vec<u8>,
}

impl BitSequence {
    pub fn new() -> Self {
        BitSequence { bits: Vec::new() }
    }

    /// Builds a sequence from raw values, rejecting anything but 0 and 1.
    pub fn from_bits(bits: Vec<u8>) -> Result<Self> {
        if let Some(bad) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidInput(format!(
                "bit value {bad} is neither 0 nor 1"
            )));
        }
        Ok(BitSequence { bits })
    }

    /// Appends a bit. Panics on values other than 0 and 1; callers always
    /// hold freshly masked values.
    pub fn push(&mut self, bit: u8) {
        assert!(bit <= 1, "bit value {bit} is neither 0 nor 1");
        self.bits.push(bit);
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    /// The first `m` bits as a new sequence.
    pub fn prefix(&self, m: usize) -> Result<BitSequence> {
        if self.bits.len() < m {
            return Err(Error::Truncation(format!(
                "need {m} bits, have {}",
                self.bits.len()
            )));
        }
        Ok(BitSequence {
            bits: self.bits[..m].to_vec(),
        })
    }

    /// Bits `offset..offset + m` as a new sequence.
    pub fn slice(&self, offset: usize, m: usize) -> Result<BitSequence> {
        if self.bits.len() < offset + m {
            return Err(Error::Truncation(format!(
                "need {} bits, have {}",
                offset + m,
                self.bits.len()
            )));
        }
        Ok(BitSequence {
            bits: self.bits[offset..offset + m].to_vec(),
        })
    }
}

/// Renders as a compact 0/1 string, e.g. `0110111101110011`.
impl fmt::Display for BitSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b == 1 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Parses 0/1 strings; whitespace is ignored so `01101111 01110011` works.
impl FromStr for BitSequence {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut bits = Vec::with_capacity(s.len());
        for ch in s.chars() {
            match ch {
                '0' => bits.push(0),
                '1' => bits.push(1),
                c if c.is_whitespace() => {}
                c => {
                    return Err(Error::InvalidInput(format!(
                        "unexpected character {c:?} in bit string"
                    )))
                }
            }
        }
        Ok(BitSequence { bits })
    }
}

impl Serialize for BitSequence {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BitSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// Expands a secret to its bit image, most-significant-bit first per byte.
///
/// The map is injective; [`decode_secret`] is its exact inverse.
pub fn encode_secret(secret: &Secret) -> BitSequence {
    let mut bits = Vec::with_capacity(secret.bit_len());
    for &byte in secret.bytes() {
        for shift in (0..8).rev() {
            bits.push((byte >> shift) & 1);
        }
    }
    BitSequence { bits }
}

/// Packs a bit sequence back into bytes (inverse of [`encode_secret`]).
///
/// The length must be a multiple of 8; anything else cannot frame into
/// bytes.
pub fn decode_secret(bits: &BitSequence) -> Result<Secret> {
    if bits.len() % 8 != 0 {
        return Err(Error::Framing(format!(
            "bit length {} is not a multiple of 8",
            bits.len()
        )));
    }
    let bytes = bits
        .bits()
        .chunks(8)
        .map(|chunk| chunk.iter().fold(0u8, |acc, &b| (acc << 1) | b))
        .collect();
    Ok(Secret { bytes })
}

/// Splits bits into consecutive, non-overlapping groups of width `n`, each
/// read as a big-endian integer (the bucket index for that step).
///
/// If the length is not divisible by `n`, the final group is padded with
/// zero bits on the right; [`ungroup_bits`] drops the padding again using
/// the declared payload length.
pub fn group_bits(bits: &BitSequence, n: u32) -> Result<Vec<u32>> {
    if n == 0 {
        return Err(Error::InvalidParameter("group width must be >= 1".into()));
    }
    if n > 16 {
        return Err(Error::InvalidParameter(format!(
            "group width {n} exceeds the supported maximum of 16"
        )));
    }
    let indices = bits
        .bits()
        .chunks(n as usize)
        .map(|chunk| {
            let mut idx = 0u32;
            for step in 0..n as usize {
                let bit = chunk.get(step).copied().unwrap_or(0);
                idx = (idx << 1) | u32::from(bit);
            }
            idx
        })
        .collect();
    Ok(indices)
}

/// Expands bucket indices back to bits and truncates to the declared
/// payload length `m` (inverse of [`group_bits`]).
pub fn ungroup_bits(indices: &[u32], n: u32, m: usize) -> Result<BitSequence> {
    if n == 0 {
        return Err(Error::InvalidParameter("group width must be >= 1".into()));
    }
    if n > 16 {
        return Err(Error::InvalidParameter(format!(
            "group width {n} exceeds the supported maximum of 16"
        )));
    }
    let limit = 1u32 << n;
    if let Some(bad) = indices.iter().find(|&&i| i >= limit) {
        return Err(Error::InvalidInput(format!(
            "index {bad} does not fit in {n} bits"
        )));
    }
    if m > indices.len() * n as usize {
        return Err(Error::Truncation(format!(
            "{} indices of width {n} carry {} bits, need {m}",
            indices.len(),
            indices.len() * n as usize
        )));
    }
    let mut bits = Vec::with_capacity(m);
    'outer: for &idx in indices {
        for shift in (0..n).rev() {
            if bits.len() == m {
                break 'outer;
            }
            bits.push(((idx >> shift) & 1) as u8);
        }
    }
    bits.truncate(m);
    Ok(BitSequence { bits })
}

/// Per-position majority vote over the first `m` bits of each sequence.
///
/// Ties (possible only for an even number of inputs) resolve to 0. The
/// result is idempotent on identical inputs and independent of input
/// order.
pub fn majority_vote(sequences: &[BitSequence], m: usize) -> Result<BitSequence> {
    if sequences.is_empty() {
        return Err(Error::InvalidInput(
            "majority vote needs at least one sequence".into(),
        ));
    }
    if let Some(short) = sequences.iter().find(|s| s.len() < m) {
        return Err(Error::InvalidInput(format!(
            "sequence of length {} is shorter than m = {m}",
            short.len()
        )));
    }
    let total = sequences.len();
    let mut bits = Vec::with_capacity(m);
    for pos in 0..m {
        let ones = sequences.iter().filter(|s| s.bits()[pos] == 1).count();
        bits.push(u8::from(ones * 2 > total));
    }
    Ok(BitSequence { bits })
}
