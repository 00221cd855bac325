//! Deterministic seed derivation.
//!
//! Every stochastic stage derives its own ChaCha stream from the run seed
//! plus structural coordinates (generation, slot, purpose tag). Candidate
//! evaluations therefore see the same stream whether the population is
//! walked sequentially or in parallel, which is what makes the two
//! execution modes byte-identical.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and up to three coordinates.
pub fn derive(seed: u64, a: u64, b: u64, c: u64) -> u64 {
    mix(mix(mix(mix(seed) ^ a) ^ b) ^ c)
}

/// A ChaCha stream for the given coordinates.
pub fn rng_for(seed: u64, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, a, b, c))
}

/// Purpose tags so unrelated consumers of the same (seed, gen, slot)
/// triple never share a stream.
pub mod tag {
    pub const POP_INIT: u64 = 1;
    pub const MUTATE: u64 = 2;
    pub const FUSION_INIT: u64 = 3;
    pub const FUSION_TRAIN: u64 = 4;
    pub const SUPERNET_INIT: u64 = 5;
    pub const SUPERNET_TRAIN: u64 = 6;
    pub const DATA: u64 = 7;
    pub const LUT: u64 = 8;
}
