//! Construction and validation of `2^n`-way vocabulary partitions with
//! special-token exclusion.
//!
//! A partition assigns every non-special token id to exactly one bucket;
//! special (control) ids are excluded, carry no bits, and are skipped by the
//! decoder. Partitions are immutable after construction and safe to share.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, TokenId};

/// A model vocabulary: ids `0..size` with a set of special (control) ids.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSpec {
    size: u32,
    special_token_ids: BTreeSet<TokenId>,
}

impl VocabSpec {
    pub fn new(size: u32, special_token_ids: impl IntoIterator<Item = TokenId>) -> Result<Self> {
        let special_token_ids: BTreeSet<TokenId> = special_token_ids.into_iter().collect();
        if let Some(&bad) = special_token_ids.iter().find(|&&id| id >= size) {
            return Err(Error::InvalidParameter(format!(
                "special token id {bad} outside vocabulary of size {size}"
            )));
        }
        Ok(VocabSpec {
            size,
            special_token_ids,
        })
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn specials(&self) -> &BTreeSet<TokenId> {
        &self.special_token_ids
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        self.special_token_ids.contains(&id)
    }

    pub fn contains(&self, id: TokenId) -> bool {
        id < self.size
    }

    pub fn non_special_count(&self) -> u32 {
        self.size - self.special_token_ids.len() as u32
    }

    /// All non-special ids in ascending order.
    pub fn non_special_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.size).filter(move |id| !self.special_token_ids.contains(id))
    }
}

/// How a partition's assignment was produced. Rule-based schemes round-trip
/// through files without storing the full assignment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionScheme {
    Parity,
    Modulo,
    Explicit,
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PartitionScheme::Parity => "parity",
            PartitionScheme::Modulo => "modulo",
            PartitionScheme::Explicit => "explicit",
        })
    }
}

/// A `2^n`-way partition of a vocabulary into buckets `0..num_buckets`.
///
/// Internally the assignment is dense (one slot per token id), so overlap
/// between buckets is unrepresentable; [`BucketPartition::validate`] reports
/// the remaining failure modes (empty buckets, coverage gaps, range and size
/// errors) as data rather than failures.
///
/// Serializes as the partition file document, so partitions embed directly
/// in larger configuration structures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionFile", into = "PartitionFile")]
pub struct BucketPartition {
    scheme: PartitionScheme,
    num_buckets: u32,
    /// Indexed by token id; `None` marks an excluded id.
    assignment: Vec<Option<u32>>,
    excluded: BTreeSet<TokenId>,
    bucket_sizes: Vec<u64>,
}

/// One violated partition invariant, reported by [`BucketPartition::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    EmptyBucket { bucket: u32 },
    /// A non-special id that no bucket covers.
    Uncovered { id: TokenId },
    BucketOutOfRange { id: TokenId, bucket: u32 },
    /// A special id that was assigned to a bucket instead of being excluded.
    SpecialAssigned { id: TokenId },
    SizeMismatch { partition: u32, vocab: u32 },
    NotPowerOfTwo { num_buckets: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyBucket { bucket } => write!(f, "empty bucket {bucket}"),
            Violation::Uncovered { id } => write!(f, "uncovered id {id}"),
            Violation::BucketOutOfRange { id, bucket } => {
                write!(f, "id {id} assigned to out-of-range bucket {bucket}")
            }
            Violation::SpecialAssigned { id } => {
                write!(f, "special id {id} assigned to a bucket")
            }
            Violation::SizeMismatch { partition, vocab } => {
                write!(f, "partition covers {partition} ids, vocabulary has {vocab}")
            }
            Violation::NotPowerOfTwo { num_buckets } => {
                write!(f, "bucket count {num_buckets} is not a power of two >= 2")
            }
        }
    }
}

fn is_power_of_two_ge2(n: u32) -> bool {
    n >= 2 && n.is_power_of_two()
}

/// Two buckets keyed on token-id parity: bucket 0 holds even ids, bucket 1
/// odd ids; specials are excluded.
pub fn parity_partition(vocab: &VocabSpec) -> Result<BucketPartition> {
    modulo_partition_with_scheme(vocab, 2, PartitionScheme::Parity)
}

/// `num_buckets` buckets keyed on `token_id mod num_buckets`; specials are
/// excluded. `num_buckets` must be a power of two >= 2 and every residue
/// class must stay non-empty after exclusions.
pub fn modulo_partition(vocab: &VocabSpec, num_buckets: u32) -> Result<BucketPartition> {
    modulo_partition_with_scheme(vocab, num_buckets, PartitionScheme::Modulo)
}

fn modulo_partition_with_scheme(
    vocab: &VocabSpec,
    num_buckets: u32,
    scheme: PartitionScheme,
) -> Result<BucketPartition> {
    if !is_power_of_two_ge2(num_buckets) {
        return Err(Error::InvalidParameter(format!(
            "bucket count must be a power of two >= 2, got {num_buckets}"
        )));
    }
    let mut assignment = vec![None; vocab.size() as usize];
    let mut bucket_sizes = vec![0u64; num_buckets as usize];
    for id in vocab.non_special_ids() {
        let bucket = id % num_buckets;
        assignment[id as usize] = Some(bucket);
        bucket_sizes[bucket as usize] += 1;
    }
    if let Some(empty) = bucket_sizes.iter().position(|&s| s == 0) {
        return Err(Error::Construction(format!(
            "bucket {empty} would be empty for vocabulary size {} with {} specials",
            vocab.size(),
            vocab.specials().len()
        )));
    }
    Ok(BucketPartition {
        scheme,
        num_buckets,
        assignment,
        excluded: vocab.specials().clone(),
        bucket_sizes,
    })
}

impl BucketPartition {
    /// Builds a partition from an explicit per-id assignment (`None` =
    /// excluded). Only shape is checked here; use [`BucketPartition::validate`]
    /// to audit the full invariants, which is what makes deliberately broken
    /// assignments representable in the first place.
    pub fn explicit(
        num_buckets: u32,
        assignment: Vec<Option<u32>>,
        excluded: impl IntoIterator<Item = TokenId>,
    ) -> Result<Self> {
        if !is_power_of_two_ge2(num_buckets) {
            return Err(Error::InvalidParameter(format!(
                "bucket count must be a power of two >= 2, got {num_buckets}"
            )));
        }
        let mut bucket_sizes = vec![0u64; num_buckets as usize];
        for bucket in assignment.iter().flatten() {
            if let Some(slot) = bucket_sizes.get_mut(*bucket as usize) {
                *slot += 1;
            }
        }
        Ok(BucketPartition {
            scheme: PartitionScheme::Explicit,
            num_buckets,
            assignment,
            excluded: excluded.into_iter().collect(),
            bucket_sizes,
        })
    }

    pub fn scheme(&self) -> PartitionScheme {
        self.scheme
    }

    pub fn num_buckets(&self) -> u32 {
        self.num_buckets
    }

    /// Group width `n` with `num_buckets = 2^n`.
    pub fn group_width(&self) -> u32 {
        self.num_buckets.trailing_zeros()
    }

    pub fn vocab_size(&self) -> u32 {
        self.assignment.len() as u32
    }

    pub fn excluded(&self) -> &BTreeSet<TokenId> {
        &self.excluded
    }

    pub fn bucket_size(&self, bucket: u32) -> u64 {
        self.bucket_sizes.get(bucket as usize).copied().unwrap_or(0)
    }

    /// The bucket holding `token_id`, or `None` for excluded (special) ids.
    pub fn bucket_of(&self, token_id: TokenId) -> Result<Option<u32>> {
        match self.assignment.get(token_id as usize) {
            Some(slot) => Ok(*slot),
            None => Err(Error::InvalidInput(format!(
                "token id {token_id} outside vocabulary of size {}",
                self.assignment.len()
            ))),
        }
    }

    /// Audits every partition invariant against `vocab` and reports all
    /// violations found (empty list = ok). Violations are data, not errors.
    pub fn validate(&self, vocab: &VocabSpec) -> Vec<Violation> {
        let mut violations = Vec::new();
        if !is_power_of_two_ge2(self.num_buckets) {
            violations.push(Violation::NotPowerOfTwo {
                num_buckets: self.num_buckets,
            });
        }
        if self.vocab_size() != vocab.size() {
            violations.push(Violation::SizeMismatch {
                partition: self.vocab_size(),
                vocab: vocab.size(),
            });
        }
        let mut sizes = vec![0u64; self.num_buckets as usize];
        let checkable = self.assignment.len().min(vocab.size() as usize);
        for id in 0..checkable as TokenId {
            match (self.assignment[id as usize], vocab.is_special(id)) {
                (Some(bucket), false) => {
                    if bucket < self.num_buckets {
                        sizes[bucket as usize] += 1;
                    } else {
                        violations.push(Violation::BucketOutOfRange { id, bucket });
                    }
                }
                (Some(_), true) => violations.push(Violation::SpecialAssigned { id }),
                (None, false) => violations.push(Violation::Uncovered { id }),
                (None, true) => {}
            }
        }
        for (bucket, &size) in sizes.iter().enumerate() {
            if size == 0 {
                violations.push(Violation::EmptyBucket {
                    bucket: bucket as u32,
                });
            }
        }
        violations
    }

    /// Serializes to the partition file format. Rule-based schemes store
    /// only the rule; explicit partitions store the full assignment. The
    /// round trip is lossless.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PartitionFile::from(
            self.clone(),
        ))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PartitionFile = serde_json::from_str(text)?;
        BucketPartition::try_from(file)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }
}

/// On-disk partition document: `scheme`, `num_buckets`, `vocab_size`,
/// `excluded`, and (for the explicit scheme) the per-id `assignment`.
#[derive(Clone, Serialize, Deserialize)]
struct PartitionFile {
    scheme: PartitionScheme,
    num_buckets: u32,
    vocab_size: u32,
    #[serde(default)]
    excluded: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    assignment: Option<Vec<Option<u32>>>,
}

impl From<BucketPartition> for PartitionFile {
    fn from(partition: BucketPartition) -> Self {
        PartitionFile {
            scheme: partition.scheme,
            num_buckets: partition.num_buckets,
            vocab_size: partition.vocab_size(),
            excluded: partition.excluded.iter().copied().collect(),
            assignment: match partition.scheme {
                PartitionScheme::Explicit => Some(partition.assignment),
                _ => None,
            },
        }
    }
}

impl TryFrom<PartitionFile> for BucketPartition {
    type Error = Error;

    fn try_from(file: PartitionFile) -> Result<Self> {
        let vocab = VocabSpec::new(file.vocab_size, file.excluded.iter().copied())?;
        match file.scheme {
            PartitionScheme::Parity => {
                if file.num_buckets != 2 {
                    return Err(Error::InvalidInput(format!(
                        "parity scheme requires 2 buckets, file says {}",
                        file.num_buckets
                    )));
                }
                parity_partition(&vocab)
            }
            PartitionScheme::Modulo => modulo_partition(&vocab, file.num_buckets),
            PartitionScheme::Explicit => {
                let assignment = file.assignment.ok_or_else(|| {
                    Error::InvalidInput("explicit scheme requires an assignment array".into())
                })?;
                if assignment.len() != file.vocab_size as usize {
                    return Err(Error::InvalidInput(format!(
                        "assignment has {} entries, vocab_size says {}",
                        assignment.len(),
                        file.vocab_size
                    )));
                }
                BucketPartition::explicit(file.num_buckets, assignment, file.excluded)
            }
        }
    }
}
