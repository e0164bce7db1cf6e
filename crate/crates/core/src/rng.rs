//! Seeded random streams.
//!
//! All randomness flows through explicitly passed [`Rng`] values. Parallel
//! work derives child seeds with [`split_seed`] so that results do not
//! depend on scheduling.

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::scalar::Real;

pub type Rng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent child seed (SplitMix64 finalizer over seed and stream).
pub fn split_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn standard_normal<T: Real>(rng: &mut Rng) -> T {
    T::lit(rng.sample::<f64, _>(StandardNormal))
}

/// One circularly-symmetric complex normal draw with E|z|^2 = 1:
/// real and imaginary parts are independent N(0, 1/2).
pub fn complex_normal<T: Real>(rng: &mut Rng) -> (T, T) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    (T::lit(re * s), T::lit(im * s))
}

pub fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

pub fn index(rng: &mut Rng, n: usize) -> usize {
    rng.random_range(0..n)
}

pub fn next_seed(rng: &mut Rng) -> u64 {
    rng.random()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_seeds_differ_by_stream() {
        let a = split_seed(7, 0);
        let b = split_seed(7, 1);
        assert_ne!(a, b);
        assert_eq!(a, split_seed(7, 0));
    }

    #[test]
    fn complex_normal_has_unit_power() {
        let mut rng = seeded(3);
        let n = 200_000;
        let p: f64 = (0..n)
            .map(|_| {
                let (re, im) = complex_normal::<f64>(&mut rng);
                re * re + im * im
            })
            .sum::<f64>()
            / n as f64;
        assert!((p - 1.0).abs() < 0.01, "E|z|^2 = {p}");
    }
}
