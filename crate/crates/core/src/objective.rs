//! The dual objective of the semi-supervised DRO problem.
//!
//! For a sample `(x, y)` and iterate `(beta, lambda)`:
//!
//! ```text
//! phi(x, y)     = lambda * delta + max_u { l(u, beta) - lambda * c(u, (x, y)) }
//! phi_eps(x, y) = lambda * delta + eps * log sum_u exp({l(u, beta) - lambda * c(u, (x, y))} / eps)
//! ```
//!
//! with `u` ranging over the support atoms at finite cost from `(x, y)`.
//! Training minimizes `E_{P_n}[phi_eps]` over `beta` and `lambda >= 0`; by LP
//! duality `min_lambda E_{P_n}[phi]` equals the worst-case expected loss over
//! distributions on the support within transport budget `delta`.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::data::SupportSet;
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::loss::Loss;
use crate::lp::{LinearProgram, LpOutcome, Relation, Sense};
use crate::transport::{Cost, TransportCost, TransportPlan};

/// Largest number of LP variables `inner_max_exact` accepts.
pub const INNER_MAX_CAP: usize = 10_000;

/// The pair minimized by training.
#[derive(Debug, Clone, PartialEq)]
pub struct DualIterate {
    pub beta: Vec<f64>,
    pub lambda: f64,
}

impl DualIterate {
    pub fn new(beta: Vec<f64>, lambda: f64) -> Self {
        DualIterate { beta, lambda }
    }

    pub fn zeros(d: usize, lambda: f64) -> Self {
        DualIterate {
            beta: vec![0.0; d],
            lambda,
        }
    }
}

/// Smoothing temperature and uncertainty radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    epsilon: f64,
    delta_star: f64,
}

impl SmoothingConfig {
    pub fn new(epsilon: f64, delta_star: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive and finite"));
        }
        if !(delta_star >= 0.0 && delta_star.is_finite()) {
            return Err(Error::invalid("delta* must be nonnegative and finite"));
        }
        Ok(SmoothingConfig {
            epsilon,
            delta_star,
        })
    }

    /// `eps = 1 / log|X_N|`, floored at `1e-4` (and 1 for a single atom).
    pub fn default_epsilon(support_len: usize) -> f64 {
        if support_len <= 1 {
            return 1.0;
        }
        (1.0 / (support_len as f64).ln()).max(1e-4)
    }

    pub fn with_default_epsilon(support_len: usize, delta_star: f64) -> Result<Self> {
        Self::new(Self::default_epsilon(support_len), delta_star)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta_star(&self) -> f64 {
        self.delta_star
    }
}

/// A sample `(x, y)` at which the dual objective is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub x: &'a [f64],
    pub y: f64,
}

impl<'a> Sample<'a> {
    pub fn new(x: &'a [f64], y: f64) -> Self {
        Sample { x, y }
    }
}

struct Term {
    index: usize,
    cost: f64,
    score: f64,
}

fn finite_terms(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    tc: &TransportCost,
    loss: Loss,
) -> Result<Vec<Term>> {
    if support.is_empty() {
        return Err(Error::Empty);
    }
    let d = support.dim();
    if sample.x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sample.x.len(),
        });
    }
    if iterate.beta.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: iterate.beta.len(),
        });
    }
    if !(iterate.lambda >= 0.0) {
        return Err(Error::invalid("lambda must be nonnegative"));
    }
    let terms: Vec<Term> = support
        .points()
        .iter()
        .enumerate()
        .filter_map(|(index, u)| {
            let cost = tc.cost(&u.x, u.y, sample.x, sample.y).finite()?;
            let l = loss.value(&u.x, u.y, &iterate.beta);
            Some(Term {
                index,
                cost,
                score: l - iterate.lambda * cost,
            })
        })
        .collect();
    if terms.is_empty() {
        return Err(Error::NoFiniteCost);
    }
    Ok(terms)
}

/// `phi` and the index of the maximizing atom (lowest index on ties).
pub fn phi_argmax(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    delta_star: f64,
    tc: &TransportCost,
    loss: Loss,
) -> Result<(f64, usize)> {
    let terms = finite_terms(support, sample, iterate, tc, loss)?;
    let mut best = &terms[0];
    for t in &terms[1..] {
        if t.score > best.score {
            best = t;
        }
    }
    Ok((iterate.lambda * delta_star + best.score, best.index))
}

/// `phi(x, y, beta, lambda) = max_u { l(u, beta) - lambda c(u, (x, y)) + lambda delta }`.
pub fn phi(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    delta_star: f64,
    tc: &TransportCost,
    loss: Loss,
) -> Result<f64> {
    phi_argmax(support, sample, iterate, delta_star, tc, loss).map(|(v, _)| v)
}

/// Log-sum-exp smoothing of [`phi`]; satisfies
/// `phi <= phi_eps <= phi + eps * log|X_N|`.
pub fn phi_eps(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    config: &SmoothingConfig,
    tc: &TransportCost,
    loss: Loss,
) -> Result<f64> {
    let terms = finite_terms(support, sample, iterate, tc, loss)?;
    let eps = config.epsilon();
    let max = terms.iter().fold(f64::NEG_INFINITY, |m, t| m.max(t.score));
    let sum: f64 = terms.iter().map(|t| ((t.score - max) / eps).exp()).sum();
    Ok((iterate.lambda * config.delta_star() + max) + eps * sum.ln())
}

/// Softmax weights of the finite-cost atoms, centered at the max score.
fn softmax(terms: &[Term], eps: f64) -> Vec<f64> {
    let max = terms.iter().fold(f64::NEG_INFINITY, |m, t| m.max(t.score));
    let mut w: Vec<f64> = terms
        .iter()
        .map(|t| ((t.score - max) / eps).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Exact `(grad_beta phi_eps, d phi_eps / d lambda)`.
pub fn grad_phi_eps(
    support: &SupportSet,
    sample: Sample<'_>,
    iterate: &DualIterate,
    config: &SmoothingConfig,
    tc: &TransportCost,
    loss: Loss,
) -> Result<(Vec<f64>, f64)> {
    let terms = finite_terms(support, sample, iterate, tc, loss)?;
    let w = softmax(&terms, config.epsilon());
    let mut dbeta = vec![0.0; support.dim()];
    let mut mean_cost = 0.0;
    for (t, wi) in terms.iter().zip(&w) {
        let u = support.point(t.index);
        loss.add_grad(&u.x, u.y, &iterate.beta, *wi, &mut dbeta);
        mean_cost += wi * t.cost;
    }
    Ok((dbeta, config.delta_star() - mean_cost))
}

/// Loss values `l(u, beta)` of every support atom.
fn support_losses(support: &SupportSet, beta: &[f64], loss: Loss) -> Result<Vec<f64>> {
    if beta.len() != support.dim() {
        return Err(Error::DimensionMismatch {
            expected: support.dim(),
            found: beta.len(),
        });
    }
    Ok(support
        .points()
        .iter()
        .map(|u| loss.value(&u.x, u.y, beta))
        .collect())
}

/// The adversary's optimal coupling and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseDistribution {
    /// Entries `(u, v, mass)`: `u` indexes the support, `v` the labeled data.
    pub plan: TransportPlan,
    /// `P*` on the support.
    pub marginal: Vec<f64>,
    /// Worst-case expected loss `E_{P*}[l]`.
    pub value: f64,
    /// Transport cost actually spent, `sum c(u, v) pi(u, v)`.
    pub budget_used: f64,
}

/// Solves the inner maximization exactly as an LP over couplings `pi(u, v)`
/// with `v` in the labeled data, column sums `1/n` and transport budget
/// `delta_star`. Limited to [`INNER_MAX_CAP`] variables.
pub fn inner_max_exact(
    support: &SupportSet,
    beta: &[f64],
    delta_star: f64,
    tc: &TransportCost,
    loss: Loss,
) -> Result<WorstCaseDistribution> {
    if !(delta_star >= 0.0 && delta_star.is_finite()) {
        return Err(Error::invalid("delta* must be nonnegative and finite"));
    }
    let losses = support_losses(support, beta, loss)?;
    let n = support.n_labeled();
    let mut pairs = Vec::new();
    let mut costs = Vec::new();
    for (v, pv) in support.labeled().iter().enumerate() {
        for (u, pu) in support.points().iter().enumerate() {
            if let Cost::Finite(c) = tc.cost(&pu.x, pu.y, &pv.x, pv.y) {
                pairs.push((u, v));
                costs.push(c);
            }
        }
    }
    if pairs.len() > INNER_MAX_CAP {
        return Err(Error::CapExceeded {
            size: pairs.len(),
            cap: INNER_MAX_CAP,
        });
    }
    let objective: Vec<f64> = pairs.iter().map(|&(u, _)| losses[u]).collect();
    let mut lp = LinearProgram::new(Sense::Maximize, objective);
    let mass = 1.0 / n as f64;
    for v in 0..n {
        let terms: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| p.1 == v)
            .map(|(k, _)| (k, 1.0))
            .collect();
        lp.add_sparse_constraint(&terms, Relation::Eq, mass);
    }
    lp.add_constraint(costs.clone(), Relation::LessEq, delta_star);
    match lp.solve() {
        LpOutcome::Optimal { x, value } => {
            let mut marginal = vec![0.0; support.len()];
            let mut entries = Vec::new();
            let mut budget_used = 0.0;
            for ((&(u, v), &w), &c) in pairs.iter().zip(&x).zip(&costs) {
                if w > 0.0 {
                    entries.push((u, v, w));
                    marginal[u] += w;
                    budget_used += w * c;
                }
            }
            Ok(WorstCaseDistribution {
                plan: TransportPlan { entries },
                marginal,
                value,
                budget_used,
            })
        }
        // The identity coupling is always feasible and the polytope is bounded.
        _ => Err(Error::NonConvergence("inner maximization LP")),
    }
}

/// Result of the scalar dual minimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualSolution {
    pub value: f64,
    pub lambda: f64,
}

/// Precomputed `(loss, cost)` columns for `E_{P_n}[phi]` at fixed `beta`.
struct DualScan {
    /// Per labeled sample: `(loss_u, cost_uv)` for finite-cost atoms.
    columns: Vec<Vec<(f64, f64)>>,
    delta: f64,
}

impl DualScan {
    fn value(&self, lambda: f64) -> f64 {
        let n = self.columns.len() as f64;
        let sum: f64 = self
            .columns
            .iter()
            .map(|col| {
                col.iter()
                    .fold(f64::NEG_INFINITY, |m, &(l, c)| m.max(l - lambda * c))
            })
            .sum();
        lambda * self.delta + sum / n
    }

    /// Right derivative in lambda.
    fn right_slope(&self, lambda: f64) -> f64 {
        let n = self.columns.len() as f64;
        let mut total = 0.0;
        for col in &self.columns {
            let best = col
                .iter()
                .fold(f64::NEG_INFINITY, |m, &(l, c)| m.max(l - lambda * c));
            let tol = 1e-12 * (1.0 + best.abs());
            let c_min = col
                .iter()
                .filter(|&&(l, c)| l - lambda * c >= best - tol)
                .fold(f64::INFINITY, |m, &(_, c)| m.min(c));
            total += c_min;
        }
        self.delta - total / n
    }
}

/// `min_{lambda >= 0} E_{P_n}[phi(X, Y, beta, lambda)]` by bracket doubling
/// from `[0, 1]` and golden-section search to `1e-8`.
pub fn dual_value(
    support: &SupportSet,
    beta: &[f64],
    delta_star: f64,
    tc: &TransportCost,
    loss: Loss,
) -> Result<DualSolution> {
    if !(delta_star >= 0.0 && delta_star.is_finite()) {
        return Err(Error::invalid("delta* must be nonnegative and finite"));
    }
    let losses = support_losses(support, beta, loss)?;
    let columns: Vec<Vec<(f64, f64)>> = support
        .labeled()
        .iter()
        .map(|pv| {
            support
                .points()
                .iter()
                .zip(&losses)
                .filter_map(|(pu, &l)| tc.cost(&pu.x, pu.y, &pv.x, pv.y).finite().map(|c| (l, c)))
                .collect()
        })
        .collect();
    let scan = DualScan {
        columns,
        delta: delta_star,
    };
    minimize_convex_scalar(|l| scan.value(l), |l| scan.right_slope(l))
}

/// Minimizes a convex function on `[0, inf)` given its right derivative.
pub(crate) fn minimize_convex_scalar<F, S>(f: F, right_slope: S) -> Result<DualSolution>
where
    F: Fn(f64) -> f64,
    S: Fn(f64) -> f64,
{
    const MAX_DOUBLINGS: usize = 60;
    if right_slope(0.0) >= 0.0 {
        return Ok(DualSolution {
            value: f(0.0),
            lambda: 0.0,
        });
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut doublings = 0;
    while right_slope(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_DOUBLINGS {
            return Err(Error::BracketFailure(MAX_DOUBLINGS));
        }
    }
    // The minimizer lies in [lo, hi].
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut best = if f(hi) < f(lo) {
        (hi, f(hi))
    } else {
        (lo, f(lo))
    };
    while b - a > 1e-8 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        for (x, fx) in [(c, fc), (d, fd)] {
            if fx < best.1 {
                best = (x, fx);
            }
        }
    }
    Ok(DualSolution {
        value: best.1,
        lambda: best.0,
    })
}

/// `exp(a)` for `a <= 0`, flushed to zero below `-50`. Every sum it enters
/// contains a term equal to one, so the dropped mass is below rounding.
#[inline]
fn scaled_weight(a: f64) -> f64 {
    if a < -50.0 {
        0.0
    } else {
        a.exp()
    }
}

/// Training-time view of the problem: the support, cost, loss and smoothing,
/// with the cost table between labeled samples and support atoms cached.
#[derive(Debug, Clone)]
pub struct DroProblem<'a> {
    support: &'a SupportSet,
    tc: TransportCost,
    loss: Loss,
    config: SmoothingConfig,
    /// Per labeled sample `v`: `(u, c(u, v))` for finite-cost atoms `u`.
    neighbors: Vec<Vec<(usize, f64)>>,
}

/// Objective value and gradient of `E_{P_n}[phi_eps]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveEval {
    pub value: f64,
    pub dbeta: Vec<f64>,
    pub dlambda: f64,
}

impl<'a> DroProblem<'a> {
    pub fn new(
        support: &'a SupportSet,
        tc: TransportCost,
        loss: Loss,
        config: SmoothingConfig,
    ) -> Result<Self> {
        if support.is_empty() || support.n_labeled() == 0 {
            return Err(Error::Empty);
        }
        let neighbors = support
            .labeled()
            .iter()
            .map(|pv| {
                support
                    .points()
                    .iter()
                    .enumerate()
                    .filter_map(|(u, pu)| {
                        tc.cost(&pu.x, pu.y, &pv.x, pv.y).finite().map(|c| (u, c))
                    })
                    .collect()
            })
            .collect();
        Ok(DroProblem {
            support,
            tc,
            loss,
            config,
            neighbors,
        })
    }

    pub fn support(&self) -> &SupportSet {
        self.support
    }

    pub fn transport_cost(&self) -> &TransportCost {
        &self.tc
    }

    pub fn loss(&self) -> Loss {
        self.loss
    }

    pub fn config(&self) -> &SmoothingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    pub fn n_labeled(&self) -> usize {
        self.support.n_labeled()
    }

    /// Finite-cost atoms and their costs for labeled sample `v`.
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[v]
    }

    fn margins(&self, beta: &[f64]) -> Vec<f64> {
        self.support
            .points()
            .iter()
            .map(|u| dot(&u.x, beta))
            .collect()
    }

    /// Empirical risk `E_{P_n}[l(X, Y, beta)]`.
    pub fn empirical_risk(&self, beta: &[f64]) -> f64 {
        let lab = self.support.labeled();
        lab.iter()
            .map(|p| self.loss.value(&p.x, p.y, beta))
            .sum::<f64>()
            / lab.len() as f64
    }

    /// `E_{P_n}[phi]` (unsmoothed).
    pub fn objective_unsmoothed(&self, it: &DualIterate) -> f64 {
        let z = self.margins(&it.beta);
        let pts = self.support.points();
        let n = self.neighbors.len() as f64;
        let sum: f64 = self
            .neighbors
            .iter()
            .map(|nb| {
                nb.iter().fold(f64::NEG_INFINITY, |m, &(u, c)| {
                    m.max(self.loss.of_margin(z[u], pts[u].y) - it.lambda * c)
                })
            })
            .sum();
        it.lambda * self.config.delta_star() + sum / n
    }

    /// `E_{P_n}[phi_eps]`.
    pub fn objective(&self, it: &DualIterate) -> f64 {
        self.evaluate(it, false).value
    }

    /// `E_{P_n}[phi_eps]` and its exact gradient.
    pub fn objective_and_gradient(&self, it: &DualIterate) -> ObjectiveEval {
        self.evaluate(it, true)
    }

    fn evaluate(&self, it: &DualIterate, with_grad: bool) -> ObjectiveEval {
        let eps = self.config.epsilon();
        let pts = self.support.points();
        let z = self.margins(&it.beta);
        let losses: Vec<f64> = pts
            .iter()
            .zip(&z)
            .map(|(p, &zu)| self.loss.of_margin(zu, p.y))
            .collect();
        let n = self.neighbors.len() as f64;
        let mut weight_on = if with_grad {
            vec![0.0; pts.len()]
        } else {
            Vec::new()
        };
        let mut value = 0.0;
        let mut mean_cost = 0.0;
        let mut scores = Vec::new();
        for nb in &self.neighbors {
            scores.clear();
            scores.extend(nb.iter().map(|&(u, c)| losses[u] - it.lambda * c));
            let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
            let mut sum = 0.0;
            for s in scores.iter_mut() {
                *s = scaled_weight((*s - max) / eps);
                sum += *s;
            }
            value += max + eps * sum.ln();
            if with_grad {
                for (&(u, c), &w) in nb.iter().zip(&scores) {
                    let w = w / sum;
                    weight_on[u] += w;
                    mean_cost += w * c;
                }
            }
        }
        let value = it.lambda * self.config.delta_star() + value / n;
        if !with_grad {
            return ObjectiveEval {
                value,
                dbeta: Vec::new(),
                dlambda: 0.0,
            };
        }
        let mut dbeta = vec![0.0; self.dim()];
        for ((p, &zu), &w) in pts.iter().zip(&z).zip(&weight_on) {
            if w != 0.0 {
                crate::linalg::axpy(w / n * self.loss.dz(zu, p.y), &p.x, &mut dbeta);
            }
        }
        ObjectiveEval {
            value,
            dbeta,
            dlambda: self.config.delta_star() - mean_cost / n,
        }
    }

    /// Exact per-sample gradient `(grad_beta phi_eps, d/dlambda phi_eps)` at
    /// labeled sample `v`.
    pub fn sample_gradient(&self, v: usize, it: &DualIterate) -> (Vec<f64>, f64) {
        let eps = self.config.epsilon();
        let pts = self.support.points();
        let nb = &self.neighbors[v];
        let scores: Vec<f64> = nb
            .iter()
            .map(|&(u, c)| self.loss.value(&pts[u].x, pts[u].y, &it.beta) - it.lambda * c)
            .collect();
        let max = scores.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s));
        let w: Vec<f64> = scores
            .iter()
            .map(|s| scaled_weight((s - max) / eps))
            .collect();
        let sum: f64 = w.iter().sum();
        let mut dbeta = vec![0.0; self.dim()];
        let mut mean_cost = 0.0;
        for (&(u, c), &wu) in nb.iter().zip(&w) {
            let wu = wu / sum;
            self.loss
                .add_grad(&pts[u].x, pts[u].y, &it.beta, wu, &mut dbeta);
            mean_cost += wu * c;
        }
        (dbeta, self.config.delta_star() - mean_cost)
    }
}
