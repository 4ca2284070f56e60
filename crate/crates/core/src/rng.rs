//! Seed derivation.
//!
//! Every random decision in the engine draws from a ChaCha stream whose seed
//! is derived from the run seed plus a tuple of tags (round, client id, ...).
//! Streams therefore never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Tags that keep independent consumers of one base seed apart.
pub mod tag {
    pub const WORLD: u64 = 0x5752_4c44;
    pub const PARTITION: u64 = 0x5041_5254;
    pub const SAMPLING: u64 = 0x5341_4d50;
    pub const CLIENT: u64 = 0x434c_4e54;
    pub const CONVERGENCE: u64 = 0x434f_4e56;
    pub const SWEEP: u64 = 0x5357_4550;
    pub const RANDOM_CACHE: u64 = 0x5243_4843;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new 64-bit seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> Stream {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
