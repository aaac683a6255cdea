//! Explicit seed derivation. Every random draw in the crate comes from a
//! generator built here from a base seed and a path of stream tags, so results
//! never depend on call order or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags used by the simulation. Arbitrary but fixed constants.
pub mod stream {
    pub const LAYOUT: u64 = 0x4c41_594f;
    pub const PHASE: u64 = 0x5048_4153;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const SLOT: u64 = 0x534c_4f54;
    pub const DATA: u64 = 0x4441_5441;
    pub const PARTITION: u64 = 0x5041_5254;
    pub const INIT: u64 = 0x494e_4954;
    pub const MINIBATCH: u64 = 0x4d49_4e49;
    pub const TRIAL: u64 = 0x5452_4941;
    pub const MONTE_CARLO: u64 = 0x4d43_4d43;
    pub const SEARCH: u64 = 0x5345_4152;
    pub const ROUND: u64 = 0x524f_554e;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes a base seed together with a path of tags into a child seed.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(base), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn rng_from(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derive_rng(base: u64, path: &[u64]) -> SimRng {
    rng_from(derive_seed(base, path))
}
