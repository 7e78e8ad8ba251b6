//! Deterministic seed derivation.
//!
//! Every randomized stage derives its own seed from the master seed and a
//! list of integer tags (stage id, fold index, restart index, ...) through
//! a splitmix64 chain, so stages are independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STAGE_DATA: u64 = 1;
pub const STAGE_SPLIT: u64 = 2;
pub const STAGE_TUNE: u64 = 3;
pub const STAGE_CV: u64 = 4;
pub const STAGE_ATTRIBUTION: u64 = 5;
// tag 6 was the (now deterministic) selection stage; kept reserved so the
// remaining stage seeds stay stable
pub const STAGE_VALIDATION: u64 = 7;
pub const STAGE_TRAIN: u64 = 8;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive a child seed from `master` and a tag sequence.
pub fn derive(master: u64, tags: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &tag in tags {
        state = splitmix64(state ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// Seeded RNG used throughout the crate.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
