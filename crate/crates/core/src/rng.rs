//! Counter-derived random streams.
//!
//! Every random draw in a run is keyed by `(seed, tag, iteration, index)`, so
//! the output does not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Tag {
    Init = 1,
    Eta = 2,
    Weights = 3,
    BlockOrder = 4,
    Particle = 5,
    Resample = 6,
    Prior = 7,
    Assign = 8,
    MergeWeights = 9,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[inline]
pub fn key(seed: u64, tag: Tag, iteration: u64, index: u64) -> u64 {
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ tag as u64);
    h = splitmix64(h ^ iteration);
    splitmix64(h ^ index)
}

pub fn stream(seed: u64, tag: Tag, iteration: u64, index: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(key(seed, tag, iteration, index))
}

/// A single uniform on `[0, 1)` without constructing a generator.
#[inline]
pub fn uniform(seed: u64, tag: Tag, iteration: u64, index: u64) -> f64 {
    (key(seed, tag, iteration, index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
