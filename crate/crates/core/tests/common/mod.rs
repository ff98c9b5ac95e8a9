#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssldro_core::data::{build_support, LabeledExample, SupportSet, UnlabeledExample};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, d: usize, scale: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..d)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn label<R: Rng>(rng: &mut R) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        -1.0
    }
}

/// A random classification instance with `n` labeled and `m` unlabeled points.
pub fn instance<R: Rng>(
    rng: &mut R,
    n: usize,
    m: usize,
    d: usize,
) -> (Vec<LabeledExample>, Vec<UnlabeledExample>) {
    let labeled = (0..n)
        .map(|_| LabeledExample::new(gaussian_vec(rng, d, 1.0), label(rng)))
        .collect();
    let unlabeled = (0..m)
        .map(|_| UnlabeledExample::new(gaussian_vec(rng, d, 1.0)))
        .collect();
    (labeled, unlabeled)
}

pub fn support<R: Rng>(rng: &mut R, n: usize, m: usize, d: usize) -> SupportSet {
    let (l, u) = instance(rng, n, m, d);
    build_support(&l, &u).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
