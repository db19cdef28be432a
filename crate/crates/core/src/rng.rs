//! Seeded random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// The single RNG type used everywhere, so a seed fully determines a run.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// SplitMix64 finalizer; derives independent sub-seeds such as per-clip
/// seeds from `(seed, index)`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Uniform draw in `[low, high]`.
pub fn uniform(rng: &mut SeededRng, low: f64, high: f64) -> f64 {
    if low == high {
        return low;
    }
    rng.random_range(low..=high)
}

/// Normal draw; `std` must be finite and non-negative.
pub fn normal(rng: &mut SeededRng, mean: f64, std: f64) -> f64 {
    if std == 0.0 {
        return mean;
    }
    Normal::new(mean, std).expect("finite non-negative std").sample(rng)
}

pub fn index(rng: &mut SeededRng, upper: usize) -> usize {
    rng.random_range(0..upper)
}
