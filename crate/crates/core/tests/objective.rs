mod common;

use common::{gaussian_vec, rel_err, rng, support};
use proptest::prelude::*;
use rand::Rng;
use ssldro_core::data::{build_support, LabeledExample, UnlabeledExample};
use ssldro_core::loss::Loss;
use ssldro_core::objective::{
    dual_value, grad_phi_eps, inner_max_exact, phi, phi_eps, DroProblem, DualIterate, Sample,
    SmoothingConfig,
};
use ssldro_core::solver::{mean_loss, penalty_norm};
use ssldro_core::transport::TransportCost;

fn any_loss<R: Rng>(rng: &mut R) -> Loss {
    if rng.random_bool(0.5) {
        Loss::Logistic
    } else {
        Loss::Squared
    }
}

#[test]
fn inner_lp_equals_dual_scan() {
    let tc = TransportCost::squared_euclidean();
    let mut r = rng(11);
    for case in 0..50 {
        let n = r.random_range(1..=4);
        let big_n = r.random_range(n..=6);
        let d = r.random_range(1..=3);
        let s = support(&mut r, n, big_n - n, d);
        let beta = gaussian_vec(&mut r, d, 1.0);
        let delta = r.random_range(0.0..2.0);
        let loss = any_loss(&mut r);
        let primal = inner_max_exact(&s, &beta, delta, &tc, loss).unwrap();
        let dual = dual_value(&s, &beta, delta, &tc, loss).unwrap();
        assert!(
            (primal.value - dual.value).abs() <= 1e-6,
            "case {case}: LP {} vs dual {}",
            primal.value,
            dual.value
        );
    }
}

#[test]
fn worst_case_plan_is_feasible() {
    let tc = TransportCost::squared_euclidean();
    let mut r = rng(12);
    for _ in 0..20 {
        let s = support(&mut r, 3, 5, 2);
        let beta = gaussian_vec(&mut r, 2, 1.0);
        let delta = r.random_range(0.0..1.5);
        let w = inner_max_exact(&s, &beta, delta, &tc, Loss::Logistic).unwrap();
        for col in w.plan.to_marginal(3) {
            assert!((col - 1.0 / 3.0).abs() < 1e-9);
        }
        assert!((w.plan.total_mass() - 1.0).abs() < 1e-9);
        assert!(w.budget_used <= delta + 1e-9);
        for &(u, v, m) in &w.plan.entries {
            assert!(m > 0.0);
            assert_eq!(s.point(u).y, s.point(v).y);
        }
    }
}

fn four_point() -> ssldro_core::data::SupportSet {
    build_support(
        &[
            LabeledExample::new(vec![0.5], 1.0),
            LabeledExample::new(vec![-1.0], 1.0),
        ],
        &[UnlabeledExample::new(vec![2.0])],
    )
    .unwrap()
}

#[test]
fn phi_matches_enumeration_on_four_points() {
    let s = four_point();
    assert_eq!(s.len(), 4);
    let tc = TransportCost::squared_euclidean();
    let it = DualIterate::new(vec![0.7], 1.0);
    let smp = Sample::new(&[0.5], 1.0);
    // Atoms (0.5,+1), (-1,+1), (2,+1) are label-compatible; (2,-1) is not.
    let candidates = [
        (1.0 + (-0.35f64).exp()).ln() - 0.0 + 0.1,
        (1.0 + (0.7f64).exp()).ln() - 2.25 + 0.1,
        (1.0 + (-1.4f64).exp()).ln() - 2.25 + 0.1,
    ];
    let expected = candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let got = phi(&s, smp, &it, 0.1, &tc, Loss::Logistic).unwrap();
    assert!((got - expected).abs() < 1e-14);

    let cfg = SmoothingConfig::new(1e-6, 0.1).unwrap();
    let smooth = phi_eps(&s, smp, &it, &cfg, &tc, Loss::Logistic).unwrap();
    assert!((smooth - got).abs() < 1e-5);
}

#[test]
fn lambda_zero_phi_is_position_free() {
    let s = four_point();
    let tc = TransportCost::squared_euclidean();
    let it = DualIterate::new(vec![0.7], 0.0);
    let a = phi(&s, Sample::new(&[0.5], 1.0), &it, 0.1, &tc, Loss::Logistic).unwrap();
    let b = phi(&s, Sample::new(&[-1.0], 1.0), &it, 3.0, &tc, Loss::Logistic).unwrap();
    assert_eq!(a, b);
}

#[test]
fn regularization_bound_for_dual_norm_pairs() {
    let mut r = rng(13);
    for (q, p) in [(1.0, f64::INFINITY), (2.0, 2.0), (f64::INFINITY, 1.0)] {
        let tc = TransportCost::new(q, 1.0).unwrap();
        for _ in 0..100 {
            let n = r.random_range(1..=4);
            let d = r.random_range(1..=3);
            let m = r.random_range(0..=3);
            let (l, u) = common::instance(&mut r, n, m, d);
            let s = build_support(&l, &u).unwrap();
            let beta = gaussian_vec(&mut r, d, 2.0);
            let delta = r.random_range(0.0..2.0);
            let worst = inner_max_exact(&s, &beta, delta, &tc, Loss::Logistic)
                .unwrap()
                .value;
            let bound = mean_loss(Loss::Logistic, &beta, &l) + delta * penalty_norm(&beta, p);
            assert!(worst <= bound + 1e-9, "q={q}: {worst} > {bound}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn smoothing_sandwich(seed in any::<u64>(), ei in 0usize..3, logistic in any::<bool>()) {
        let eps = [1.0, 0.1, 0.01][ei];
        let mut r = rng(seed);
        let n = r.random_range(1..=4);
        let m = r.random_range(0..=4);
        let d = r.random_range(1..=3);
        let s = support(&mut r, n, m, d);
        let tc = TransportCost::squared_euclidean();
        let loss = if logistic { Loss::Logistic } else { Loss::Squared };
        let it = DualIterate::new(gaussian_vec(&mut r, d, 1.5), r.random_range(0.0..3.0));
        let delta = r.random_range(0.0..1.0);
        let cfg = SmoothingConfig::new(eps, delta).unwrap();
        let x = gaussian_vec(&mut r, d, 1.0);
        let smp = Sample::new(&x, s.point(0).y);
        let lo = phi(&s, smp, &it, delta, &tc, loss).unwrap();
        let mid = phi_eps(&s, smp, &it, &cfg, &tc, loss).unwrap();
        let hi = lo + eps * (s.len() as f64).ln();
        prop_assert!(lo <= mid && mid <= hi, "{lo} {mid} {hi}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gradient_matches_central_differences(seed in any::<u64>(), ei in 0usize..3) {
        let eps = [1.0, 0.5, 0.1][ei];
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let s = support(&mut r, 3, 2, d);
        let tc = TransportCost::squared_euclidean();
        let loss = if r.random_bool(0.5) { Loss::Logistic } else { Loss::Squared };
        let cfg = SmoothingConfig::new(eps, r.random_range(0.0..1.0)).unwrap();
        let beta = gaussian_vec(&mut r, d, 1.0);
        let lambda = r.random_range(0.1..2.0);
        let x = gaussian_vec(&mut r, d, 1.0);
        let smp = Sample::new(&x, s.point(0).y);
        let f = |b: &[f64], l: f64| phi_eps(&s, smp, &DualIterate::new(b.to_vec(), l), &cfg, &tc, loss).unwrap();
        let (gb, gl) = grad_phi_eps(&s, smp, &DualIterate::new(beta.clone(), lambda), &cfg, &tc, loss).unwrap();
        let h = 1e-5;
        let fd_l = (f(&beta, lambda + h) - f(&beta, lambda - h)) / (2.0 * h);
        prop_assert!(rel_err(gl, fd_l) <= 1e-6, "lambda: {gl} vs {fd_l}");
        for k in 0..d {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[k] += h;
            bm[k] -= h;
            let fd = (f(&bp, lambda) - f(&bm, lambda)) / (2.0 * h);
            prop_assert!(rel_err(gb[k], fd) <= 1e-6, "beta[{k}]: {} vs {fd}", gb[k]);
        }
    }

    #[test]
    fn dual_value_is_monotone_in_radius(seed in any::<u64>()) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let s = support(&mut r, 3, 3, d);
        let tc = TransportCost::squared_euclidean();
        let beta = gaussian_vec(&mut r, d, 1.0);
        let a = r.random_range(0.0..1.0);
        let b = a + r.random_range(0.0..1.0);
        let va = dual_value(&s, &beta, a, &tc, Loss::Logistic).unwrap().value;
        let vb = dual_value(&s, &beta, b, &tc, Loss::Logistic).unwrap().value;
        prop_assert!(va <= vb + 1e-9);
    }

    #[test]
    fn smoothed_risk_is_convex_along_segments(seed in any::<u64>(), t in 0.0f64..1.0) {
        let mut r = rng(seed);
        let d = r.random_range(1..=3);
        let s = support(&mut r, 4, 3, d);
        let pb = DroProblem::new(
            &s,
            TransportCost::squared_euclidean(),
            Loss::Logistic,
            SmoothingConfig::new(0.3, 0.2).unwrap(),
        )
        .unwrap();
        let a = DualIterate::new(gaussian_vec(&mut r, d, 1.0), r.random_range(0.0..2.0));
        let b = DualIterate::new(gaussian_vec(&mut r, d, 1.0), r.random_range(0.0..2.0));
        let mid = DualIterate::new(
            a.beta.iter().zip(&b.beta).map(|(x, y)| (1.0 - t) * x + t * y).collect(),
            (1.0 - t) * a.lambda + t * b.lambda,
        );
        let lhs = pb.objective(&mid);
        let rhs = (1.0 - t) * pb.objective(&a) + t * pb.objective(&b);
        prop_assert!(lhs <= rhs + 1e-12 * (1.0 + rhs.abs()));
    }
}
