//! Seeded random streams.
//!
//! A stream is identified by a master seed plus a path of tags, e.g.
//! `(seed, [LOCAL_TRAIN, round, client])`. Streams with different paths are
//! statistically independent, and a stream never depends on how many draws
//! another stream has made, which is what lets clients train concurrently
//! without perturbing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub mod tag {
    pub const DATA: u64 = 1;
    pub const TEST_DATA: u64 = 2;
    pub const DISTILL_DATA: u64 = 3;
    pub const PARTITION: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const SPLIT: u64 = 6;
    pub const INIT: u64 = 7;
    pub const SAMPLE_CLIENTS: u64 = 8;
    pub const LOCAL_TRAIN: u64 = 9;
    pub const PEER_PLAN: u64 = 10;
    pub const MUTUAL: u64 = 11;
    pub const SOURCES: u64 = 12;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed and a tag path into a single 64-bit stream key.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(seed: u64, path: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, path))
}
