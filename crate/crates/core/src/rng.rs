//! Seed derivation for reproducible, parallel-safe random streams.
//!
//! Every stochastic task derives its own stream from `(master seed, tag,
//! index)`, so results do not depend on execution order and independent
//! tasks could run concurrently without sharing RNG state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Each stochastic subsystem owns one tag so that streams never
/// collide across purposes.
pub mod tag {
    pub const SCENE: u64 = 0x01;
    pub const SCENE_ORDER: u64 = 0x02;
    pub const SPLIT: u64 = 0x03;
    pub const PARAM_INIT: u64 = 0x04;
    pub const TRAIN_EPOCH: u64 = 0x05;
    pub const GMM_SAMPLE: u64 = 0x06;
    pub const KL_MODE: u64 = 0x07;
    pub const PAIR: u64 = 0x08;
    pub const VAL_QUERY: u64 = 0x09;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a purpose tag and a task index.
pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ 0x6a09_e667_f3bc_c908);
    let b = splitmix64(a ^ tag.wrapping_mul(0xff51_afd7_ed55_8ccd));
    splitmix64(b ^ index.wrapping_mul(0xc4ce_b9fe_1a85_ec53))
}

/// RNG seeded from a (derived) seed value.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shorthand: derive a seed and build its RNG in one call.
pub fn derive_rng(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    rng_from(derive_seed(master, tag, index))
}
