//! Seed derivation. Every random stream in the crate is a ChaCha8 generator keyed by an
//! explicit 64-bit seed mixed with a stream label, so that independent consumers never
//! share draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(mix64(base) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream_rng(base: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(base, stream))
}

/// Stream labels.
pub mod streams {
    pub const GENERATE: u64 = 1;
    pub const EPISODE: u64 = 2;
    pub const BREAKDOWN: u64 = 3;
    pub const POLICY: u64 = 4;
    pub const INIT: u64 = 5;
    pub const SHUFFLE: u64 = 6;
    pub const EVAL: u64 = 7;
    pub const TRAIN_EPISODE: u64 = 8;
}
