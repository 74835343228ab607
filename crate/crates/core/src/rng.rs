//! Seed derivation. Every random stream in the crate is a `ChaCha8Rng`
//! seeded from the master seed plus a stream tag, so independent parts of a
//! run never share state and can be generated in any order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags. Values are part of the reproducibility contract.
pub(crate) mod tag {
    pub const OBJECT: u64 = 1;
    pub const TEMPLATE_BACKGROUND: u64 = 2;
    pub const SCENE: u64 = 3;
    pub const TREE: u64 = 4;
    pub const CHUNK_PLAN: u64 = 5;
    pub const DISTRACTOR: u64 = 6;
    pub const PLACEMENT: u64 = 7;
    pub const BENCH: u64 = 8;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, tag: u64, index: u64) -> u64 {
    splitmix(splitmix(master ^ splitmix(tag)) ^ index)
}

pub fn stream(master: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, tag, index))
}
