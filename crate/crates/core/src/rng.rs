//! Seeded RNG stream derivation.
//!
//! Every stochastic component draws from a ChaCha stream derived from a
//! `(seed, task index)` pair, so concurrent or reordered execution cannot
//! change results: stream `t` under seed `s` is the same byte stream no
//! matter which worker consumes it or in what order tasks complete.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG for task `task` under `seed`. Tasks with distinct indices get
/// independent streams of the same seeded generator.
pub fn task_rng(seed: u64, task: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(task.into());
    rng
}
