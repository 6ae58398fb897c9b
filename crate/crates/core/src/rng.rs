//! Seeded random streams.
//!
//! Every stochastic routine in the crate draws from ChaCha8 (`rand_chacha`),
//! keyed through `SeedableRng::seed_from_u64`. Gaussian variates come from
//! `rand_distr::StandardNormal` (ziggurat). Both algorithms are fixed and
//! platform-independent, so outputs are reproducible byte for byte.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream seed from a parent seed and a stream index
/// (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut SeededRng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn normals(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(rng)).collect()
}
