//! Seed derivation and space-filling designs.
//!
//! Every random decision in a run draws from a named substream of the single
//! run seed, so resuming at iteration `k` reproduces exactly what an
//! uninterrupted run would have done.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Real;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable seed for substream `name`, element `index` of run `seed`.
pub fn substream(seed: u64, name: &str, index: u64) -> u64 {
    // FNV-1a over the name; stable across platforms and releases.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(seed ^ h).wrapping_add(index))
}

pub fn rng_for(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream(seed, name, index))
}

/// Latin hypercube sample of `n` points in the box `[lower, upper]`.
pub fn latin_hypercube<T: Real, R: Rng + ?Sized>(n: usize, lower: &[T], upper: &[T], rng: &mut R) -> Vec<Vec<T>> {
    let d = lower.len();
    let mut points = vec![vec![T::zero(); d]; n];
    let mut strata: Vec<usize> = (0..n).collect();
    for k in 0..d {
        strata.shuffle(rng);
        for (i, p) in points.iter_mut().enumerate() {
            let u = (strata[i] as f64 + rng.gen::<f64>()) / n as f64;
            p[k] = lower[k] + (upper[k] - lower[k]) * T::lit(u);
        }
    }
    points
}

pub fn uniform_in_box<T: Real, R: Rng + ?Sized>(lower: &[T], upper: &[T], rng: &mut R) -> Vec<T> {
    lower
        .iter()
        .zip(upper)
        .map(|(&lo, &hi)| lo + (hi - lo) * T::lit(rng.gen::<f64>()))
        .collect()
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = f64::from(base);
    let mut inv = 1.0 / b;
    let mut x = 0.0;
    while i > 0 {
        x += (i % u64::from(base)) as f64 * inv;
        i /= u64::from(base);
        inv /= b;
    }
    x
}

/// First `n` Halton points (skipping the origin) mapped into the box.
pub fn halton<T: Real>(n: usize, lower: &[T], upper: &[T]) -> Vec<Vec<T>> {
    let d = lower.len();
    assert!(d <= PRIMES.len(), "Halton design supports up to {} dimensions", PRIMES.len());
    (1..=n as u64)
        .map(|i| {
            (0..d)
                .map(|k| lower[k] + (upper[k] - lower[k]) * T::lit(radical_inverse(i, PRIMES[k])))
                .collect()
        })
        .collect()
}

/// Tensor grid with `per_dim` points per dimension, box corners included.
pub fn tensor_grid<T: Real>(per_dim: usize, lower: &[T], upper: &[T]) -> Vec<Vec<T>> {
    let d = lower.len();
    let total = per_dim.pow(d as u32);
    let denom = T::from_usize_lossy(per_dim.saturating_sub(1).max(1));
    (0..total)
        .map(|mut idx| {
            let mut p = vec![T::zero(); d];
            for k in (0..d).rev() {
                let i = idx % per_dim;
                idx /= per_dim;
                p[k] = lower[k] + (upper[k] - lower[k]) * T::from_usize_lossy(i) / denom;
            }
            p
        })
        .collect()
}
