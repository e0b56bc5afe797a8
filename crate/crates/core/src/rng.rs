//! Seeded random streams.
//!
//! Every sample owns a [`SimRng`] derived from `(master_seed, sample_index)`,
//! so results never depend on scheduling or worker count. Within a sample the
//! walk, the initial delays and the future tail each use their own ChaCha
//! stream of the same key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream ids within one sample.
pub mod streams {
    pub const WALK: u64 = 1;
    pub const INITIAL: u64 = 2;
    pub const TAIL: u64 = 3;
    pub const HARNESS: u64 = 4;
    pub const FRESH: u64 = 5;
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a batch driven by `master`.
pub fn sample_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
