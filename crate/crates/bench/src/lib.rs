//! Fixture builders shared by the pipeline benchmarks. Everything is
//! deterministic so benchmark numbers are comparable across runs.

use stegtok_core::codec::encode_secret;
use stegtok_core::encoder::encode_generate;
use stegtok_core::lm::demo_model;
use stegtok_core::partition::{modulo_partition, parity_partition};
use stegtok_core::{
    BitSequence, BucketPartition, GenerationConfig, LanguageModel, Secret, TokenId, ToyLm,
};

/// 32-bit payload used by every benchmark.
pub fn payload() -> BitSequence {
    encode_secret(&Secret::from_text("wolf"))
}

pub fn model() -> ToyLm {
    demo_model()
}

pub fn partition(num_buckets: u32) -> BucketPartition {
    let lm = demo_model();
    match num_buckets {
        2 => parity_partition(lm.vocab()).unwrap(),
        n => modulo_partition(lm.vocab(), n).unwrap(),
    }
}

pub fn config(max_new_tokens: u32) -> GenerationConfig {
    GenerationConfig {
        max_new_tokens,
        seed: 1,
        ..GenerationConfig::default()
    }
}

/// A 160-token carrier stream for decoder benchmarks.
pub fn stream() -> Vec<TokenId> {
    let lm = model();
    let partition = partition(2);
    encode_generate(&lm, &[], &payload(), &partition, &config(160)).unwrap()
}
