//! Deterministic RNG sub-stream derivation.
//!
//! Every randomized component draws from a ChaCha8 stream keyed by the run
//! seed plus a tag path (case, iteration, layer, ...). Identical inputs give
//! bit-identical streams on every platform, which is what makes whole runs
//! reproducible byte for byte.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Derives an independent RNG from `seed` and a tag path.
pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ t.wrapping_mul(0x9e3779b97f4a7c15));
    }
    ChaCha8Rng::seed_from_u64(s)
}

/// Stable small tags for the stream paths used across the crate.
pub mod tag {
    pub const MOE: u64 = 1;
    pub const SPARSE_ATTENTION: u64 = 2;
    pub const MOD: u64 = 3;
    pub const PRUNE_MAGNITUDES: u64 = 4;
    pub const PROFILE_NOISE: u64 = 5;
    pub const LAYER_BASE: u64 = 6;
}
