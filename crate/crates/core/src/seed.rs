//! Deterministic seed derivation.
//!
//! Every random stream in a run is a ChaCha8 generator seeded from the run
//! seed and a stream label, so adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a list of labels into a base seed.
pub fn derive(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng(seed: u64, labels: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive(seed, labels))
}

/// Stream labels.
pub mod stream {
    pub const SCENARIO: u64 = 1;
    pub const SESSION_ORDER: u64 = 2;
    pub const FL: u64 = 3;
    pub const STRATEGY: u64 = 4;
    pub const EPISODE: u64 = 5;
    pub const NETWORK: u64 = 6;
}
