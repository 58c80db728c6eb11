//! Hierarchical seed derivation.
//!
//! Every random stream in a run is keyed by a path of indices below the
//! master seed (e.g. iteration → layer → generation → individual), so the
//! same stream is produced no matter how work is scheduled across threads
//! or whether a run was resumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of indices.
pub fn derive_seed(parent: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(parent), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D))))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn child_rng(parent: u64, path: &[u64]) -> Rng {
    rng_from(derive_seed(parent, path))
}

/// Stream tags keep sibling streams from colliding when they share an index path.
pub mod tag {
    pub const INIT: u64 = 1;
    pub const ITERATION: u64 = 2;
    pub const SUBSET: u64 = 3;
    pub const ADVERSARIAL: u64 = 4;
    pub const LAYER: u64 = 5;
    pub const FINETUNE: u64 = 6;
    pub const MONITOR: u64 = 7;
    pub const SHARD: u64 = 8;
    pub const GENERATION: u64 = 9;
    pub const INDIVIDUAL: u64 = 10;
    pub const PARENTS: u64 = 11;
    pub const EPOCH: u64 = 12;
    pub const BATCH: u64 = 13;
}
