//! Root-seed splitting. Every random stream in an experiment is derived from
//! one root seed and a fixed stream tag, so adding a consumer never shifts the
//! draws seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const INIT: u64 = 1;
    pub const PATCHES: u64 = 2;
    pub const GRAPH: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const GRADCHECK: u64 = 6;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `(root, tag)`.
pub fn derive(root: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(root) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn stream_rng(root: u64, tag: u64) -> Rng {
    rng(derive(root, tag))
}
