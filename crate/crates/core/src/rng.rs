//! Seeded random streams.
//!
//! Every consumer of randomness derives its generator from a `(seed, stream)`
//! pair. The generator is ChaCha8 keyed by the 64-bit seed with the stream id
//! selecting an independent keystream, so output is identical on every
//! platform and independent purposes never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Stream ids used across the crate. Kept in one place so two purposes can
/// never collide on the same keystream.
pub mod streams {
    pub const ORACLE_RECORDS: u64 = 1;
    pub const ORACLE_META: u64 = 2;
    pub const NET_INIT: u64 = 3;
    pub const COND_INIT: u64 = 4;
    pub const TRAIN_BATCH: u64 = 5;
    pub const TRAIN_NOISE: u64 = 6;
    pub const SAMPLE: u64 = 7;
    pub const CLASSIFIER_INIT: u64 = 8;
    pub const CLASSIFIER_BATCH: u64 = 9;
    pub const PRIVACY: u64 = 10;
    pub const SHUFFLE: u64 = 11;
    pub const SYNTHETIC: u64 = 12;
}

/// Deterministic generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed; used to give each record or repetition its own stream
/// without threading a generator through parallel code.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normal_vec(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * standard_normal(rng)).collect()
}
