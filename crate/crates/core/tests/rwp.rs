mod common;

use common::{gaussian_vec, rng};
use proptest::prelude::*;
use rand::Rng;
use ssldro_core::data::{LabeledExample, UnlabeledExample};
use ssldro_core::linalg::dot;
use ssldro_core::rwp::{
    rwp_primal, rwp_value, sample_limit_d1, select_delta, D1Moments, GaussianDensity,
    GaussianLinearModel, LimitPool, RwpInstance,
};
use ssldro_core::stats::{mean, std_error};

fn random_instance<R: Rng>(r: &mut R) -> RwpInstance {
    let d = r.random_range(1..=3);
    let n = r.random_range(2..=8);
    let extra = r.random_range(0..=4);
    let beta = gaussian_vec(r, d, 1.0);
    let labeled = (0..n)
        .map(|_| {
            let x = gaussian_vec(r, d, 1.0);
            let y = dot(&beta, &x) + gaussian_vec(r, 1, 0.5)[0];
            LabeledExample::new(x, y)
        })
        .collect();
    let unlabeled = (0..extra)
        .map(|_| UnlabeledExample::new(gaussian_vec(r, d, 1.0)))
        .collect();
    let beta_star = beta
        .iter()
        .map(|b| b + gaussian_vec(r, 1, 0.2)[0])
        .collect();
    RwpInstance::new(labeled, unlabeled, beta_star).unwrap()
}

#[test]
fn dual_matches_primal_lp() {
    let mut r = rng(41);
    for case in 0..30 {
        let inst = random_instance(&mut r);
        let primal = rwp_primal(&inst).unwrap();
        let dual = rwp_value(&inst).unwrap();
        match primal {
            Some(p) => assert!(
                (p - dual).abs() <= 1e-6,
                "case {case}: primal {p} dual {dual}"
            ),
            None => assert_eq!(dual, f64::INFINITY, "case {case}"),
        }
    }
}

#[test]
fn chi_square_limit_has_mean_kappa() {
    let m = D1Moments::new(4.0, 2.0).unwrap();
    let mut r = rng(42);
    let xs: Vec<f64> = (0..1_000_000)
        .map(|_| sample_limit_d1(&m, &mut r).value)
        .collect();
    assert!((mean(&xs) - 2.0).abs() <= 3.0 * std_error(&xs));
}

#[test]
fn d1_radius_is_the_scaled_chi_square_quantile() {
    let m = D1Moments::new(1.0, 1.0).unwrap();
    let mut r = rng(43);
    let s = select_delta(
        0.05,
        100,
        1,
        200_000,
        |g| Ok(sample_limit_d1(&m, g).value),
        &mut r,
    )
    .unwrap();
    assert!((s.delta - 0.038415).abs() < 1e-3, "{}", s.delta);
}

#[test]
fn pooled_limits_are_nonnegative_and_vanish_at_zero() {
    for d in [2, 3] {
        let model = GaussianLinearModel {
            beta_star: (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect(),
            noise_sd: 1.0,
        };
        let mut r = rng(44 + d as u64);
        let pool = LimitPool::from_sampler(
            2_000,
            |g| model.draw(g),
            &model.beta_star,
            1.0,
            &GaussianDensity::standard(d),
            &mut r,
        )
        .unwrap();
        assert_eq!(pool.sample_with(vec![0.0; d]).unwrap().value, 0.0);
        for _ in 0..200 {
            let s = pool.sample(&mut r).unwrap();
            assert!(s.value >= 0.0);
            assert!(s.value.is_finite());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn profile_is_nonnegative(seed in any::<u64>()) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r);
        prop_assert!(rwp_value(&inst).unwrap() >= 0.0);
    }
}
