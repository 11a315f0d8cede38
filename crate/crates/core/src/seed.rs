//! Counter-based seed splitting.
//!
//! Every random stream in a run is addressed by a path of integers
//! `[purpose, repetition, round, client, ...]` and seeded with
//! `derive_seed(master_seed, path)`. Each path element is folded into the
//! state with the SplitMix64 finalizer, so streams never depend on the order
//! in which worker threads happen to request them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream purposes. The numeric values are part of the reproducibility
/// contract and must not be renumbered.
pub mod purpose {
    pub const CLIENT: u64 = 1;
    pub const INIT: u64 = 2;
    pub const PRIVACY: u64 = 3;
    pub const ATTACK: u64 = 4;
    pub const PARTITION: u64 = 5;
    pub const ES_SEED: u64 = 6;
    pub const UNLEARN: u64 = 7;
    pub const WARMUP: u64 = 8;
    pub const DATASET: u64 = 9;
}

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |state, &p| splitmix64(state ^ splitmix64(p)))
}

pub fn stream(master: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(master, path))
}
