//! Seeded, counter-based random number streams.
//!
//! Every source of randomness in this crate is a ChaCha8 generator addressed
//! by `(seed, stream)`. ChaCha is a counter-mode cipher, so distinct stream
//! indices give statistically independent sequences from the same seed, and a
//! worker can be handed its stream up front: results never depend on thread
//! scheduling.
//!
//! Convention used by the pipeline: each stage derives its own 64-bit seed
//! with [`derive_seed`] from the root config seed and a stage tag, then
//! addresses its workers as streams `0, 1, 2, ...` under that stage seed.
//! Stream [`SWAP_STREAM`] is reserved for replica-exchange swap decisions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream index reserved for parallel-tempering swap decisions.
pub const SWAP_STREAM: u64 = u64::MAX;

/// ChaCha8 generator for the given seed and stream counter.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a stage seed from a root seed and a tag (SplitMix64 finalizer).
///
/// Used to give each pipeline stage (exploration, per-round clustering,
/// per-round chains, per-region weight estimation, ...) its own seed so that
/// stream indices can restart at zero within every stage without collisions.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draw `amount` distinct indices from `0..population` (partial Fisher-Yates).
///
/// Owned here rather than delegated to `rand::seq` so the byte-level draw
/// sequence is pinned by this crate, not by a dependency's internals.
pub fn sample_without_replacement(
    rng: &mut ChaCha8Rng,
    population: usize,
    amount: usize,
) -> Vec<usize> {
    use rand::Rng;
    assert!(amount <= population, "cannot sample more than the population");
    let mut indices: Vec<usize> = (0..population).collect();
    for i in 0..amount {
        let j = rng.random_range(i..population);
        indices.swap(i, j);
    }
    indices.truncate(amount);
    indices
}
