//! Seeded tensor sampling. All randomness in the workspace comes from
//! ChaCha8 streams derived from one 64-bit seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{Real, Tensor};

/// ChaCha8 generator for `seed`, positioned on an independent `stream`.
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal<T: Real>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        T::of(z * std)
    })
}

/// Normal draws with rejection outside ±`bound` standard deviations.
pub fn truncated_normal<T: Real>(rng: &mut impl Rng, shape: &[usize], std: f64, bound: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= bound {
            break T::of(z * std);
        }
    })
}

pub fn uniform<T: Real>(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}
