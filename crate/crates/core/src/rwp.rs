//! The robust Wasserstein profile (RWP) for linear regression and its use to
//! select the uncertainty radius.
//!
//! For labeled data `(X_i, Y_i)`, extra predictors `X_{n+1..N}` and a
//! hypothesized `beta*`, the profile is the cheapest squared-Euclidean
//! transport of the empirical measure onto `{X_j} x {Y_i}` (responses never
//! move) under which the estimating equation `E[X (Y - beta*^T X)] = 0`
//! holds. Its LP dual is
//!
//! ```text
//! R_n = max_lambda (1/n) sum_i min_j { ||X_i - X_j||^2 - lambda^T h_ij },
//! h_ij = X_j (Y_i - beta*^T X_j).
//! ```
//!
//! Scaled by `n` (d <= 2) or `n^(1/2 + 3/(2d+2))` (d >= 3) the profile has a
//! nondegenerate limit law; its `1 - alpha` quantile over the rate gives the
//! radius.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::data::{LabeledExample, UnlabeledExample};
use crate::error::{Error, Result};
use crate::linalg::{dot, solve_spd_regularized, squared_distance, Cholesky};
use crate::lp::{LinearProgram, LpOutcome, Relation, Sense};

/// Largest `n * N` accepted by [`rwp_primal`].
pub const PRIMAL_CAP: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct RwpInstance {
    labeled: Vec<LabeledExample>,
    unlabeled: Vec<UnlabeledExample>,
    beta_star: Vec<f64>,
}

impl RwpInstance {
    pub fn new(
        labeled: Vec<LabeledExample>,
        unlabeled: Vec<UnlabeledExample>,
        beta_star: Vec<f64>,
    ) -> Result<Self> {
        let d = crate::data::check_labeled(&labeled, false)?;
        if beta_star.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: beta_star.len(),
            });
        }
        if let Some(u) = unlabeled.iter().find(|u| u.x.len() != d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: u.x.len(),
            });
        }
        Ok(RwpInstance {
            labeled,
            unlabeled,
            beta_star,
        })
    }

    pub fn n(&self) -> usize {
        self.labeled.len()
    }

    /// Number of support predictors `N` (labeled included).
    pub fn big_n(&self) -> usize {
        self.labeled.len() + self.unlabeled.len()
    }

    /// `gamma = N / n`.
    pub fn gamma(&self) -> f64 {
        self.big_n() as f64 / self.n() as f64
    }

    pub fn dim(&self) -> usize {
        self.beta_star.len()
    }

    pub fn labeled(&self) -> &[LabeledExample] {
        &self.labeled
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    fn predictor(&self, j: usize) -> &[f64] {
        if j < self.labeled.len() {
            &self.labeled[j].x
        } else {
            &self.unlabeled[j - self.labeled.len()].x
        }
    }

    fn h(&self, i: usize, j: usize, bx_j: f64, out: &mut [f64]) {
        let r = self.labeled[i].y - bx_j;
        for (o, x) in out.iter_mut().zip(self.predictor(j)) {
            *o = x * r;
        }
    }
}

/// Candidate terms `(c_ij, h_ij)` per row, flattened with stride `d + 1`.
struct Terms {
    d: usize,
    n: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl Terms {
    fn row(&self, i: usize) -> impl Iterator<Item = (f64, &[f64])> {
        let s = self.d + 1;
        self.data[self.offsets[i] * s..self.offsets[i + 1] * s]
            .chunks_exact(s)
            .map(|c| (c[0], &c[1..]))
    }

    fn max_row_len(&self) -> usize {
        (0..self.n)
            .map(|i| self.offsets[i + 1] - self.offsets[i])
            .max()
            .unwrap_or(1)
    }

    fn len(&self) -> usize {
        self.offsets[self.n]
    }

    /// Exact dual function `g(lambda)`.
    fn exact(&self, lambda: &[f64]) -> f64 {
        let total: f64 = (0..self.n)
            .map(|i| {
                self.row(i)
                    .fold(f64::INFINITY, |m, (c, h)| m.min(c - dot(lambda, h)))
            })
            .sum();
        total / self.n as f64
    }

    /// Smoothed dual, its gradient and the negated Hessian.
    fn smoothed(&self, lambda: &[f64], mu: f64, want_hess: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.d;
        let mut value = 0.0;
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; if want_hess { d * d } else { 0 }];
        let mut a = Vec::new();
        for i in 0..self.n {
            a.clear();
            a.extend(self.row(i).map(|(c, h)| c - dot(lambda, h)));
            let m = a.iter().fold(f64::INFINITY, |m, &v| m.min(v));
            let mut s = 0.0;
            let mut mean = vec![0.0; d];
            let mut second = vec![0.0; if want_hess { d * d } else { 0 }];
            for (w, (_, h)) in a.iter_mut().zip(self.row(i)) {
                *w = (-(*w - m) / mu).exp();
                s += *w;
                for k in 0..d {
                    mean[k] += *w * h[k];
                    if want_hess {
                        for l in 0..d {
                            second[k * d + l] += *w * h[k] * h[l];
                        }
                    }
                }
            }
            value += m - mu * s.ln();
            for k in 0..d {
                mean[k] /= s;
                grad[k] -= mean[k];
            }
            if want_hess {
                for k in 0..d {
                    for l in 0..d {
                        hess[k * d + l] += (second[k * d + l] / s - mean[k] * mean[l]) / mu;
                    }
                }
            }
        }
        let inv = 1.0 / self.n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        hess.iter_mut().for_each(|h| *h *= inv);
        (value * inv, grad, hess)
    }
}

/// Keeps `j` for row `i` unless `c_ij - lambda^T h_ij >= -lambda^T h_ii` for
/// every `||lambda||_inf <= radius`, i.e. `c_ij >= radius ||h_ij - h_ii||_1`.
fn prune(inst: &RwpInstance, radius: f64) -> Terms {
    let d = inst.dim();
    let n = inst.n();
    let big_n = inst.big_n();
    let bx: Vec<f64> = (0..big_n)
        .map(|j| dot(&inst.beta_star, inst.predictor(j)))
        .collect();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut data = Vec::new();
    let mut hii = vec![0.0; d];
    let mut hij = vec![0.0; d];
    offsets.push(0);
    let mut count = 0;
    for i in 0..n {
        let xi = inst.predictor(i);
        inst.h(i, i, bx[i], &mut hii);
        data.push(0.0);
        data.extend_from_slice(&hii);
        count += 1;
        for (j, &bxj) in bx.iter().enumerate() {
            if j == i {
                continue;
            }
            let c = squared_distance(xi, inst.predictor(j));
            inst.h(i, j, bxj, &mut hij);
            let spread: f64 = hij.iter().zip(&hii).map(|(a, b)| (a - b).abs()).sum();
            if c < radius * spread {
                data.push(c);
                data.extend_from_slice(&hij);
                count += 1;
            }
        }
        offsets.push(count);
    }
    Terms {
        d,
        n,
        offsets,
        data,
    }
}

/// True when `lambda / ||lambda||` certifies an unbounded dual: along `t w`
/// the dual grows like `-t mean_i max_j w^T h_ij`, which is never negative
/// when a feasible plan exists.
fn recedes(inst: &RwpInstance, lambda: &[f64]) -> bool {
    let norm = crate::linalg::norm2(lambda);
    if norm == 0.0 {
        return false;
    }
    let w: Vec<f64> = lambda.iter().map(|l| l / norm).collect();
    let bx: Vec<f64> = (0..inst.big_n())
        .map(|j| dot(&inst.beta_star, inst.predictor(j)))
        .collect();
    let mut h = vec![0.0; inst.dim()];
    let mut total = 0.0;
    let mut scale = 0.0;
    for i in 0..inst.n() {
        let mut best = f64::NEG_INFINITY;
        for (j, b) in bx.iter().enumerate() {
            inst.h(i, j, *b, &mut h);
            let v = dot(&w, &h);
            best = best.max(v);
            scale += v.abs();
        }
        total += best;
    }
    total < -1e-12 * scale
}

/// Result of the dual solve.
#[derive(Debug, Clone, PartialEq)]
pub struct RwpSolution {
    /// `R_n`; `+inf` when no plan satisfies the estimating equation.
    pub value: f64,
    pub lambda: Vec<f64>,
    /// Candidate `(i, j)` pairs kept after pruning.
    pub candidates: usize,
    pub box_radius: f64,
}

/// Damped Newton ascent on the smoothed dual at temperature `mu`, with steps
/// clipped to the box `||lambda||_inf <= radius`.
fn newton_stage(terms: &Terms, lambda: &mut [f64], mu: f64, radius: f64) {
    let d = terms.d;
    for _ in 0..200 {
        let (f, g, h) = terms.smoothed(lambda, mu, true);
        let trace: f64 = (0..d).map(|k| h[k * d + k]).sum();
        let mut hr = h.clone();
        let ridge = 1e-12 * (trace / d as f64) + 1e-300;
        for k in 0..d {
            hr[k * d + k] += ridge;
        }
        let step = match solve_spd_regularized(&hr, &g) {
            Ok(s) => s,
            Err(_) => g.iter().map(|v| v / ridge).collect(),
        };
        let decrement = dot(&g, &step);
        if !(decrement > 1e-3 * mu) {
            return;
        }
        let mut t: f64 = 1.0;
        for (l, s) in lambda.iter().zip(&step) {
            if *s != 0.0 {
                let bound = if *s > 0.0 { radius - l } else { -radius - l };
                t = t.min((bound / s).max(0.0));
            }
        }
        let mut moved = false;
        for _ in 0..60 {
            if t == 0.0 {
                break;
            }
            let trial: Vec<f64> = lambda.iter().zip(&step).map(|(l, s)| l + t * s).collect();
            if terms.smoothed(&trial, mu, false).0 >= f + 1e-4 * t * decrement {
                lambda.copy_from_slice(&trial);
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return;
        }
    }
}

/// Maximizes the dual by continuation on a log-sum-exp smoothing with damped
/// Newton steps, over candidates pruned for the box `||lambda||_inf <= L`;
/// `L` doubles until the maximizer sits strictly inside, where concavity
/// makes it global. The reported value is the exact dual function at the
/// final multiplier, accurate to `tol`.
pub fn rwp_solve(inst: &RwpInstance, tol: f64) -> Result<RwpSolution> {
    const MAX_DOUBLINGS: usize = 80;
    let d = inst.dim();
    let mut radius = 1.0 / (inst.n() as f64).sqrt();
    let mut lambda = vec![0.0; d];
    for _ in 0..MAX_DOUBLINGS {
        let terms = prune(inst, radius);
        let off_diag: Vec<f64> = (0..terms.n)
            .flat_map(|i| terms.row(i).skip(1).map(|(c, _)| c))
            .collect();
        let mu0 = if off_diag.is_empty() {
            1.0
        } else {
            off_diag.iter().sum::<f64>() / off_diag.len() as f64
        };
        let mu_min = tol / (terms.max_row_len().max(2) as f64).ln();
        lambda
            .iter_mut()
            .for_each(|l| *l = l.clamp(-radius, radius));
        let mut mu = mu0.max(mu_min);
        loop {
            newton_stage(&terms, &mut lambda, mu, radius);
            if mu <= mu_min {
                break;
            }
            mu = (mu * 0.1).max(mu_min);
        }
        let inner = lambda.iter().all(|l| l.abs() <= 0.9 * radius);
        if inner {
            if recedes(inst, &lambda) {
                break;
            }
            let g = terms.exact(&lambda);
            let (value, lambda) = if g > 0.0 {
                (g, lambda)
            } else {
                (0.0, vec![0.0; d])
            };
            return Ok(RwpSolution {
                value,
                lambda,
                candidates: terms.len(),
                box_radius: radius,
            });
        }
        radius *= 2.0;
    }
    // A recession direction, or a multiplier escaping every box: unbounded.
    Ok(RwpSolution {
        value: f64::INFINITY,
        lambda,
        candidates: 0,
        box_radius: radius,
    })
}

/// `R_n(beta*)` to absolute accuracy `1e-11`.
pub fn rwp_value(inst: &RwpInstance) -> Result<f64> {
    rwp_solve(inst, 1e-11).map(|s| s.value)
}

/// The primal transport LP: minimize `sum c_ij pi_ij` subject to row sums
/// `1/n` and `sum pi_ij h_ij = 0`. `None` when infeasible.
pub fn rwp_primal(inst: &RwpInstance) -> Result<Option<f64>> {
    let n = inst.n();
    let big_n = inst.big_n();
    let d = inst.dim();
    if n * big_n > PRIMAL_CAP {
        return Err(Error::CapExceeded {
            size: n * big_n,
            cap: PRIMAL_CAP,
        });
    }
    let var = |i: usize, j: usize| i * big_n + j;
    let mut cost = vec![0.0; n * big_n];
    let mut h = vec![vec![0.0; n * big_n]; d];
    let mut buf = vec![0.0; d];
    for i in 0..n {
        for j in 0..big_n {
            cost[var(i, j)] = squared_distance(inst.predictor(i), inst.predictor(j));
            inst.h(i, j, dot(&inst.beta_star, inst.predictor(j)), &mut buf);
            for k in 0..d {
                h[k][var(i, j)] = buf[k];
            }
        }
    }
    let mut lp = LinearProgram::new(Sense::Minimize, cost);
    for i in 0..n {
        let row: Vec<(usize, f64)> = (0..big_n).map(|j| (var(i, j), 1.0)).collect();
        lp.add_sparse_constraint(&row, Relation::Eq, 1.0 / n as f64);
    }
    for hk in h {
        lp.add_constraint(hk, Relation::Eq, 0.0);
    }
    Ok(match lp.solve() {
        LpOutcome::Optimal { value, .. } => Some(value),
        LpOutcome::Infeasible => None,
        LpOutcome::Unbounded => return Err(Error::NonConvergence("profile LP unbounded")),
    })
}

/// Rate exponent `r` with `n^r R_n` converging in law.
pub fn rate_exponent(d: usize) -> f64 {
    if d <= 2 {
        1.0
    } else {
        0.5 + 3.0 / (2.0 * d as f64 + 2.0)
    }
}

/// Volume of the Euclidean unit ball, `pi^(d/2) / Gamma(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    match d {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(d - 2) * 2.0 * PI / d as f64,
    }
}

/// One draw of a limit law.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLawSample {
    pub value: f64,
    pub d: usize,
    /// The Gaussian draw (empty for the one-dimensional law).
    pub z: Vec<f64>,
    /// The optimizer `zeta(Z)` (empty for the one-dimensional law).
    pub zeta: Vec<f64>,
}

/// Moments entering the one-dimensional limit `kappa_1 chi^2_1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct D1Moments {
    /// `E[X^2 e^2]`.
    pub x2e2: f64,
    /// `E[(e - beta* X)^2]`.
    pub resid2: f64,
}

impl D1Moments {
    pub fn new(x2e2: f64, resid2: f64) -> Result<Self> {
        if !(x2e2 > 0.0 && resid2 > 0.0 && x2e2.is_finite() && resid2.is_finite()) {
            return Err(Error::invalid(
                "limit-law moments must be positive and finite",
            ));
        }
        Ok(D1Moments { x2e2, resid2 })
    }

    /// Sample moments of `(X, e = Y - beta* X)`.
    pub fn plug_in(data: &[LabeledExample], beta_star: f64) -> Result<Self> {
        if data.is_empty() || data.iter().any(|ex| ex.x.len() != 1) {
            return Err(Error::invalid("plug-in moments need one-dimensional data"));
        }
        let n = data.len() as f64;
        let mut a = 0.0;
        let mut b = 0.0;
        for ex in data {
            let x = ex.x[0];
            let e = ex.y - beta_star * x;
            a += x * x * e * e;
            b += (e - beta_star * x).powi(2);
        }
        Self::new(a / n, b / n)
    }

    pub fn kappa(&self) -> f64 {
        self.x2e2 / self.resid2
    }
}

/// `kappa_1 chi^2_1`.
pub fn sample_limit_d1<R: Rng + ?Sized>(moments: &D1Moments, rng: &mut R) -> LimitLawSample {
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    LimitLawSample {
        value: moments.kappa() * chi.sample(rng),
        d: 1,
        z: Vec::new(),
        zeta: Vec::new(),
    }
}

/// A probability density on `R^d`.
pub trait Density {
    fn density(&self, x: &[f64]) -> f64;
}

#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: Vec<f64>,
    chol: Cholesky,
    log_norm: f64,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, cov: &[f64]) -> Result<Self> {
        let d = mean.len();
        let chol = Cholesky::new(cov, d)?;
        let log_norm = -0.5 * (d as f64 * (2.0 * PI).ln() + chol.log_det());
        Ok(GaussianDensity {
            mean,
            chol,
            log_norm,
        })
    }

    pub fn standard(d: usize) -> Self {
        let mut cov = vec![0.0; d * d];
        for k in 0..d {
            cov[k * d + k] = 1.0;
        }
        Self::new(vec![0.0; d], &cov).expect("identity is positive definite")
    }

    /// Maximum-likelihood fit to predictor rows.
    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let first = rows.first().ok_or(Error::Empty)?;
        let d = first.len();
        let m = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for k in 0..d {
                mean[k] += r[k] / m;
            }
        }
        let mut cov = vec![0.0; d * d];
        for r in &rows {
            for k in 0..d {
                for l in 0..d {
                    cov[k * d + l] += (r[k] - mean[k]) * (r[l] - mean[l]) / m;
                }
            }
        }
        Self::new(mean, &cov)
    }
}

impl Density for GaussianDensity {
    fn density(&self, x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let sol = self.chol.solve(&diff);
        (self.log_norm - 0.5 * dot(&diff, &sol)).exp()
    }
}

/// Monte Carlo stand-in for the expectations in the `d >= 2` limit laws.
///
/// Each pool element carries `V = (e I - X beta*^T)(e I - beta* X^T)` and
/// the rate `Lambda = gamma f_X(X) pi^(d/2) / Gamma(d/2 + 1)`. The Gaussian
/// `Z` has covariance `E[e^2 X X^T]`. With `q = zeta^T V zeta` the law is
/// the value of
///
/// ```text
/// d = 2:  max_zeta  -2 zeta^T Z - E[q - (1 - exp(-Lambda q)) / Lambda]
/// d >= 3: max_zeta  -2 zeta^T Z - (2 / (d + 2)) E[Lambda q^(d/2 + 1)]
/// ```
///
/// whose maximizer solves `Z = -E[V psi'(q)] zeta`, with
/// `psi'(q) = 1 - exp(-Lambda q)` or `Lambda q^(d/2)`.
#[derive(Debug, Clone)]
pub struct LimitPool {
    d: usize,
    v: Vec<f64>,
    rate: Vec<f64>,
    z_cov: Vec<f64>,
    z_chol: Cholesky,
}

impl LimitPool {
    /// Builds the pool from draws `(X, e)`.
    pub fn new(
        draws: &[(Vec<f64>, f64)],
        beta_star: &[f64],
        gamma: f64,
        density: &dyn Density,
    ) -> Result<Self> {
        let d = beta_star.len();
        if d < 2 {
            return Err(Error::invalid("the pooled limit law needs d >= 2"));
        }
        if draws.is_empty() {
            return Err(Error::Empty);
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma must be positive"));
        }
        let ball = unit_ball_volume(d);
        let m = draws.len() as f64;
        let mut v = Vec::with_capacity(draws.len() * d * d);
        let mut rate = Vec::with_capacity(draws.len());
        let mut z_cov = vec![0.0; d * d];
        for (x, e) in draws {
            if x.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: x.len(),
                });
            }
            // A = e I - beta* x^T; V = A A^T.
            let mut a = vec![0.0; d * d];
            for k in 0..d {
                for l in 0..d {
                    a[k * d + l] = if k == l { *e } else { 0.0 } - beta_star[k] * x[l];
                }
            }
            for k in 0..d {
                for l in 0..d {
                    let s: f64 = (0..d).map(|r| a[k * d + r] * a[l * d + r]).sum();
                    v.push(s);
                    z_cov[k * d + l] += e * e * x[k] * x[l] / m;
                }
            }
            rate.push(gamma * density.density(x) * ball);
        }
        let z_chol = Cholesky::new(&z_cov, d).map_err(|_| Error::NotPositiveDefinite)?;
        Ok(LimitPool {
            d,
            v,
            rate,
            z_cov,
            z_chol,
        })
    }

    /// Draws `M` pairs from `sampler` and builds the pool.
    pub fn from_sampler<R, S>(
        m: usize,
        mut sampler: S,
        beta_star: &[f64],
        gamma: f64,
        density: &dyn Density,
        rng: &mut R,
    ) -> Result<Self>
    where
        R: Rng + ?Sized,
        S: FnMut(&mut R) -> (Vec<f64>, f64),
    {
        let draws: Vec<(Vec<f64>, f64)> = (0..m).map(|_| sampler(rng)).collect();
        Self::new(&draws, beta_star, gamma, density)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rate.is_empty()
    }

    pub fn z_covariance(&self) -> &[f64] {
        &self.z_cov
    }

    pub fn draw_z<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let g: Vec<f64> = (0..self.d).map(|_| StandardNormal.sample(rng)).collect();
        self.z_chol.lower_mul(&g)
    }

    fn vk(&self, k: usize) -> &[f64] {
        &self.v[k * self.d * self.d..(k + 1) * self.d * self.d]
    }

    /// `(psi(q), psi'(q), psi''(q))` for rate `l`.
    fn psi(&self, q: f64, l: f64) -> (f64, f64, f64) {
        if self.d == 2 {
            let lq = l * q;
            let p0 = if lq < 1e-4 {
                l * q * q * (0.5 - lq / 6.0 + lq * lq / 24.0)
            } else {
                q + (-lq).exp_m1() / l
            };
            (p0, -(-lq).exp_m1(), l * (-lq).exp())
        } else {
            let h = self.d as f64 / 2.0;
            let qh = if self.d.is_multiple_of(2) {
                q.powi(self.d as i32 / 2)
            } else {
                q.powi(self.d as i32 / 2) * q.sqrt()
            };
            (
                l * qh * q / (h + 1.0),
                l * qh,
                if q > 0.0 { h * l * qh / q } else { 0.0 },
            )
        }
    }

    /// Concave objective, its gradient and negated Hessian.
    fn eval(&self, zeta: &[f64], z: &[f64], want_hess: bool) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.d;
        let m = self.len() as f64;
        let mut e_psi = 0.0;
        let mut e_grad = vec![0.0; d];
        let mut hess = vec![0.0; if want_hess { d * d } else { 0 }];
        let mut vz = vec![0.0; d];
        for k in 0..self.len() {
            let vk = self.vk(k);
            for r in 0..d {
                vz[r] = dot(&vk[r * d..(r + 1) * d], zeta);
            }
            let q = dot(zeta, &vz).max(0.0);
            let (p0, p1, p2) = self.psi(q, self.rate[k]);
            e_psi += p0;
            for r in 0..d {
                e_grad[r] += p1 * vz[r];
            }
            if want_hess {
                for r in 0..d {
                    for c in 0..d {
                        hess[r * d + c] += 2.0 * p1 * vk[r * d + c] + 4.0 * p2 * vz[r] * vz[c];
                    }
                }
            }
        }
        let value = -2.0 * dot(zeta, z) - e_psi / m;
        let grad: Vec<f64> = (0..d).map(|r| -2.0 * z[r] - 2.0 * e_grad[r] / m).collect();
        hess.iter_mut().for_each(|h| *h /= m);
        (value, grad, hess)
    }

    /// The limit objective at `zeta` for Gaussian draw `z`.
    pub fn objective(&self, zeta: &[f64], z: &[f64]) -> f64 {
        self.eval(zeta, z, false).0
    }

    /// `E[V psi'(zeta^T V zeta)] zeta`.
    pub fn fixed_point_map(&self, zeta: &[f64]) -> Vec<f64> {
        let zero = vec![0.0; self.d];
        self.eval(zeta, &zero, false)
            .1
            .iter()
            .map(|g| -0.5 * g)
            .collect()
    }

    /// Solves `Z = -E[V psi'(q)] zeta` to residual `1e-8 (1 + ||Z||)`.
    pub fn solve(&self, z: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        let tol = 1e-8 * (1.0 + crate::linalg::norm2(z));
        if crate::linalg::norm2(z) == 0.0 {
            return Ok(vec![0.0; d]);
        }
        // Start on the ray -t Z at the maximizer of the concave 1-D restriction,
        // found by bracketing on the sign of its slope and safeguarded Newton.
        let ray = |t: f64| {
            let zeta: Vec<f64> = z.iter().map(|v| -t * v).collect();
            let (_, g, h) = self.eval(&zeta, z, true);
            let hz: Vec<f64> = (0..d).map(|r| dot(&h[r * d..(r + 1) * d], z)).collect();
            (-dot(&g, z), dot(z, &hz))
        };
        let (mut a, mut b) = (0.0, 1e-3);
        while ray(b).0 > 0.0 {
            a = b;
            b *= 2.0;
            if b > 1e12 {
                return Err(Error::NonConvergence("limit-law fixed point"));
            }
        }
        let mut t0 = 0.5 * (a + b);
        for _ in 0..100 {
            let (slope, curv) = ray(t0);
            if slope > 0.0 {
                a = t0;
            } else {
                b = t0;
            }
            let newton = t0 + slope / curv;
            t0 = if curv > 0.0 && newton > a && newton < b {
                newton
            } else {
                0.5 * (a + b)
            };
            if b - a <= 1e-6 * b || slope.abs() <= 1e-3 * tol {
                break;
            }
        }
        let mut zeta: Vec<f64> = z.iter().map(|v| -t0 * v).collect();
        for _ in 0..200 {
            let (f, grad, hess) = self.eval(&zeta, z, true);
            if 0.5 * crate::linalg::norm2(&grad) <= tol {
                return Ok(zeta);
            }
            let step = solve_spd_regularized(&hess, &grad)?;
            let slope = dot(&grad, &step);
            // Below this the decrease is lost in the rounding of `f`: take the
            // full Newton step.
            let tiny = slope <= 1e-12 * (1.0 + f.abs());
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = zeta.iter().zip(&step).map(|(a, s)| a + t * s).collect();
                if tiny || self.objective(&trial, z) >= f + 1e-4 * t * slope {
                    zeta = trial;
                    break;
                }
                t *= 0.5;
                if t < 1e-14 {
                    let r = 0.5 * crate::linalg::norm2(&grad);
                    return if r <= 1e3 * tol {
                        Ok(zeta)
                    } else {
                        Err(Error::NonConvergence("limit-law fixed point"))
                    };
                }
            }
        }
        Err(Error::NonConvergence("limit-law fixed point"))
    }

    /// The limit value for a given Gaussian draw.
    pub fn sample_with(&self, z: Vec<f64>) -> Result<LimitLawSample> {
        let zeta = self.solve(&z)?;
        let value = self.objective(&zeta, &z).max(0.0);
        Ok(LimitLawSample {
            value,
            d: self.d,
            z,
            zeta,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<LimitLawSample> {
        let z = self.draw_z(rng);
        self.sample_with(z)
    }
}

/// Radius from limit-law draws: the `1 - alpha` empirical quantile divided by
/// `n^rate_exponent(d)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectedDelta {
    pub delta: f64,
    pub raw_quantile: f64,
    pub exponent: f64,
}

pub fn delta_from_samples(
    alpha: f64,
    n: usize,
    d: usize,
    samples: &[f64],
) -> Result<SelectedDelta> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha must be in (0, 1)"));
    }
    if samples.is_empty() || n == 0 {
        return Err(Error::Empty);
    }
    let raw_quantile = crate::stats::quantile(samples, 1.0 - alpha);
    let exponent = rate_exponent(d);
    Ok(SelectedDelta {
        delta: raw_quantile / (n as f64).powf(exponent),
        raw_quantile,
        exponent,
    })
}

/// Draws `num_samples >= 10^4` values from `sampler` and applies
/// [`delta_from_samples`].
pub fn select_delta<R, S>(
    alpha: f64,
    n: usize,
    d: usize,
    num_samples: usize,
    mut sampler: S,
    rng: &mut R,
) -> Result<SelectedDelta>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> Result<f64>,
{
    if num_samples < 10_000 {
        return Err(Error::invalid(
            "radius selection needs at least 10^4 limit draws",
        ));
    }
    let samples = (0..num_samples)
        .map(|_| sampler(rng))
        .collect::<Result<Vec<f64>>>()?;
    delta_from_samples(alpha, n, d, &samples)
}

/// `Y = beta*^T X + sd * e` with `X ~ N(0, I_d)` and `e ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearModel {
    pub beta_star: Vec<f64>,
    pub noise_sd: f64,
}

impl GaussianLinearModel {
    /// One `(X, e)` pair with `e = Y - beta*^T X`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let x: Vec<f64> = self
            .beta_star
            .iter()
            .map(|_| StandardNormal.sample(rng))
            .collect();
        let e: f64 = StandardNormal.sample(rng);
        (x, self.noise_sd * e)
    }

    /// `n` labeled pairs plus `round((gamma - 1) n)` extra predictors.
    pub fn instance<R: Rng + ?Sized>(
        &self,
        n: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<RwpInstance> {
        if !(gamma >= 1.0) {
            return Err(Error::invalid("gamma must be at least 1"));
        }
        let labeled = (0..n)
            .map(|_| {
                let (x, e) = self.draw(rng);
                let y = dot(&self.beta_star, &x) + e;
                LabeledExample::new(x, y)
            })
            .collect();
        let extra = ((gamma - 1.0) * n as f64).round() as usize;
        let unlabeled = (0..extra)
            .map(|_| UnlabeledExample::new(self.draw(rng).0))
            .collect();
        RwpInstance::new(labeled, unlabeled, self.beta_star.clone())
    }
}
