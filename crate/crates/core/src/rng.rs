//! Seed derivation. Every random stream in a run is derived from the single
//! 64-bit run seed by mixing in stream coordinates, so the values a tile or a
//! step sees never depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::LatentTensor;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(GOLDEN);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// `mix64(mix64(mix64(seed) ^ a) ^ b)`: the seed of stream `(a, b)`.
///
/// `a` is conventionally a tile index and `b` a step index.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    mix64(mix64(mix64(seed) ^ a) ^ b)
}

pub fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, a, b))
}

pub fn standard_normal(height: usize, width: usize, channels: usize, rng: &mut impl rand::Rng) -> LatentTensor {
    LatentTensor::from_fn(height, width, channels, |_, _, _| StandardNormal.sample(rng))
}
