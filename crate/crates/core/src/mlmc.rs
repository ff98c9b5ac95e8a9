//! Unbiased randomized multilevel Monte Carlo estimates of the gradient of
//! `phi_eps`.
//!
//! The exact gradient is a ratio of expectations under uniform sampling of
//! the support, `E[h1] / E[h0]` and `E[h2] / E[h0]`, so plain Monte Carlo is
//! biased. The estimator draws a geometric level `G`, then `1 + 2^(G+1)`
//! atoms `W_0, W_1, ...`, and debiases the ratio of the last `2^(G+1)` draws
//! against the mean of the ratios over its odd- and even-indexed halves.
//!
//! Atoms at infinite cost from the sample carry zero weight in every ratio,
//! so draws are taken uniformly from the finite-cost atoms only; this leaves
//! every ratio's law unchanged and keeps `h0(W_0) > 0`. Each ratio is computed
//! with exponents centered at the largest score among its own draws, so all
//! denominators are at least one and no draw is ever rejected.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Geometric};

use crate::data::{SupportPoint, SupportSet};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot};
use crate::loss::Loss;
use crate::objective::{DroProblem, DualIterate, Sample, SmoothingConfig};
use crate::transport::TransportCost;

/// Success probability of the level distribution, `1 - 2^(-3/2)`.
pub const P_G: f64 = 1.0 - 0.353_553_390_593_273_8;

/// `P(G = g) = P_G (1 - P_G)^g`.
pub fn level_probability(g: u32) -> f64 {
    P_G * (1.0 - P_G).powi(g as i32)
}

/// `E[draws_used] = 1 + 2 P_G / (1 - 2^(-1/2))`.
pub fn expected_draws() -> f64 {
    1.0 + 2.0 * P_G / (1.0 - core::f64::consts::FRAC_1_SQRT_2)
}

/// Draws the level `G`, the number of failures before the first success.
pub fn sample_level<R: Rng + ?Sized>(rng: &mut R) -> u32 {
    let g = Geometric::new(P_G).expect("valid probability").sample(rng);
    u32::try_from(g).unwrap_or(u32::MAX)
}

/// One draw of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    /// Unbiased for `d phi_eps / d lambda`.
    pub lambda: f64,
    /// Unbiased for `grad_beta phi_eps`.
    pub gamma: Vec<f64>,
    /// The level `G`.
    pub level: u32,
    /// `2^(G+1) + 1`.
    pub draws_used: usize,
}

/// `(h0, h1, h2)` for atom `w`, with the exponent shifted by `shift`:
/// `h0 = exp((l(w) - lambda c(w, sample)) / eps - shift)`, `h1 = h0 c`,
/// `h2 = h0 grad l(w)`. A label-flipped `w` gives all zeros.
pub fn h_values(
    w: &SupportPoint,
    sample: Sample<'_>,
    iterate: &DualIterate,
    config: &SmoothingConfig,
    tc: &TransportCost,
    loss: Loss,
    shift: f64,
) -> (f64, f64, Vec<f64>) {
    match tc.cost(&w.x, w.y, sample.x, sample.y).finite() {
        None => (0.0, 0.0, vec![0.0; w.x.len()]),
        Some(c) => {
            let score = loss.value(&w.x, w.y, &iterate.beta) - iterate.lambda * c;
            let h0 = (score / config.epsilon() - shift).exp();
            let h2 = loss
                .grad(&w.x, w.y, &iterate.beta)
                .into_iter()
                .map(|g| h0 * g)
                .collect();
            (h0, h0 * c, h2)
        }
    }
}

/// Streaming sums of `(h0, h1, h2)` centered at the running maximum score.
#[derive(Debug, Clone)]
struct Accumulator {
    max: f64,
    s0: f64,
    s1: f64,
    s2: Vec<f64>,
}

impl Accumulator {
    fn new(d: usize) -> Self {
        Accumulator {
            max: f64::NEG_INFINITY,
            s0: 0.0,
            s1: 0.0,
            s2: vec![0.0; d],
        }
    }

    fn rescale(&mut self, new_max: f64, eps: f64) {
        if new_max > self.max {
            let f = if self.max == f64::NEG_INFINITY {
                0.0
            } else {
                ((self.max - new_max) / eps).exp()
            };
            self.s0 *= f;
            self.s1 *= f;
            self.s2.iter_mut().for_each(|v| *v *= f);
            self.max = new_max;
        }
    }

    fn push(&mut self, draw: &Draw<'_>, eps: f64) {
        self.rescale(draw.score, eps);
        let w = ((draw.score - self.max) / eps).exp();
        self.s0 += w;
        self.s1 += w * draw.cost;
        axpy(w * draw.dz, draw.x, &mut self.s2);
    }

    fn merged(a: &Accumulator, b: &Accumulator, eps: f64) -> Accumulator {
        let mut out = a.clone();
        out.rescale(b.max, eps);
        let f = ((b.max - out.max) / eps).exp();
        out.s0 += f * b.s0;
        out.s1 += f * b.s1;
        axpy(f, &b.s2, &mut out.s2);
        out
    }

    fn ratio_lambda(&self) -> f64 {
        self.s1 / self.s0
    }

    fn ratio_beta(&self) -> impl Iterator<Item = f64> + '_ {
        self.s2.iter().map(move |v| v / self.s0)
    }
}

struct Draw<'a> {
    x: &'a [f64],
    score: f64,
    cost: f64,
    dz: f64,
}

/// Core of the estimator over finite-cost candidates `(atom, cost)`.
fn estimate<R: Rng + ?Sized>(
    points: &[SupportPoint],
    candidates: &[(usize, f64)],
    iterate: &DualIterate,
    config: &SmoothingConfig,
    loss: Loss,
    rng: &mut R,
) -> GradientSample {
    let eps = config.epsilon();
    let d = iterate.beta.len();
    let draw = |rng: &mut R| {
        let (u, cost) = candidates[rng.random_range(0..candidates.len())];
        let p = &points[u];
        let z = dot(&p.x, &iterate.beta);
        Draw {
            x: &p.x,
            score: loss.of_margin(z, p.y) - iterate.lambda * cost,
            cost,
            dz: loss.dz(z, p.y),
        }
    };
    let level = sample_level(rng);
    let w0 = draw(rng);
    let half = 1usize << level.min(62);
    let mut odd = Accumulator::new(d);
    let mut even = Accumulator::new(d);
    for _ in 0..half {
        odd.push(&draw(rng), eps);
        even.push(&draw(rng), eps);
    }
    let all = Accumulator::merged(&odd, &even, eps);
    let scale = 1.0 / level_probability(level);
    let delta_lambda = all.ratio_lambda() - 0.5 * (odd.ratio_lambda() + even.ratio_lambda());
    let mut gamma: Vec<f64> = all
        .ratio_beta()
        .zip(odd.ratio_beta().zip(even.ratio_beta()))
        .map(|(a, (o, e))| (a - 0.5 * (o + e)) * scale)
        .collect();
    axpy(w0.dz, w0.x, &mut gamma);
    GradientSample {
        lambda: config.delta_star() - delta_lambda * scale - w0.cost,
        gamma,
        level,
        draws_used: 2 * half + 1,
    }
}

/// One estimator draw at an arbitrary sample `(x, y)`.
pub fn unbiased_gradient<R: Rng + ?Sized>(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    config: &SmoothingConfig,
    tc: &TransportCost,
    loss: Loss,
    rng: &mut R,
) -> Result<GradientSample> {
    if support.is_empty() {
        return Err(Error::Empty);
    }
    if sample.x.len() != support.dim() || iterate.beta.len() != support.dim() {
        return Err(Error::DimensionMismatch {
            expected: support.dim(),
            found: if sample.x.len() != support.dim() {
                sample.x.len()
            } else {
                iterate.beta.len()
            },
        });
    }
    if !(iterate.lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let candidates: Vec<(usize, f64)> = support
        .points()
        .iter()
        .enumerate()
        .filter_map(|(u, p)| {
            tc.cost(&p.x, p.y, sample.x, sample.y)
                .finite()
                .map(|c| (u, c))
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoFiniteCost);
    }
    Ok(estimate(
        support.points(),
        &candidates,
        iterate,
        config,
        loss,
        rng,
    ))
}

/// One estimator draw at labeled sample `v` of a prepared problem.
pub fn unbiased_gradient_at<R: Rng + ?Sized>(
    problem: &DroProblem<'_>,
    v: usize,
    iterate: &DualIterate,
    rng: &mut R,
) -> GradientSample {
    estimate(
        problem.support().points(),
        problem.neighbors(v),
        iterate,
        problem.config(),
        problem.loss(),
        rng,
    )
}

/// Average of `batch` independent draws at a fixed sample.
#[allow(clippy::too_many_arguments)]
pub fn unbiased_gradient_batch<R: Rng + ?Sized>(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    config: &SmoothingConfig,
    tc: &TransportCost,
    loss: Loss,
    batch: usize,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    if batch == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut lambda = 0.0;
    let mut gamma = vec![0.0; support.dim()];
    for _ in 0..batch {
        let s = unbiased_gradient(support, sample, iterate, config, tc, loss, rng)?;
        lambda += s.lambda;
        axpy(1.0, &s.gamma, &mut gamma);
    }
    let inv = 1.0 / batch as f64;
    gamma.iter_mut().for_each(|g| *g *= inv);
    Ok((lambda * inv, gamma))
}
