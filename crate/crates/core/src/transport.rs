//! Ground cost and exact optimal transport discrepancy on finite supports.
//!
//! The ground cost between `(x, y)` and `(x', y')` is `||x - x'||_q^rho` when
//! the labels agree and infinite otherwise. Infinity is a variant of [`Cost`],
//! never a large float, so downstream code can drop label-flip pairs exactly.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::lp_distance;
use crate::lp::{LinearProgram, LpOutcome, Relation, Sense};

const MASS_TOL: f64 = 1e-9;

/// A nonnegative extended real.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cost {
    Finite(f64),
    Infinite,
}

impl Cost {
    pub fn is_finite(self) -> bool {
        matches!(self, Cost::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Cost::Finite(c) => Some(c),
            Cost::Infinite => None,
        }
    }

    /// As an `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl PartialOrd for Cost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (Cost::Finite(a), Cost::Finite(b)) => a.partial_cmp(b),
            (Cost::Finite(_), Cost::Infinite) => Some(Ordering::Less),
            (Cost::Infinite, Cost::Finite(_)) => Some(Ordering::Greater),
            (Cost::Infinite, Cost::Infinite) => Some(Ordering::Equal),
        }
    }
}

/// `c((x,y),(x',y')) = ||x - x'||_q^rho` if `y == y'`, else infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportCost {
    q: f64,
    rho: f64,
}

impl TransportCost {
    /// `q >= 1` (use `f64::INFINITY` for the max norm) and `rho >= 1`.
    pub fn new(q: f64, rho: f64) -> Result<Self> {
        if !(q >= 1.0) {
            return Err(Error::invalid("norm order q must be >= 1"));
        }
        if !(rho >= 1.0 && rho.is_finite()) {
            return Err(Error::invalid(
                "cost exponent rho must be a finite value >= 1",
            ));
        }
        Ok(TransportCost { q, rho })
    }

    /// Squared Euclidean cost (q = 2, rho = 2).
    pub fn squared_euclidean() -> Self {
        TransportCost { q: 2.0, rho: 2.0 }
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Cost between predictor vectors alone, ignoring labels.
    #[inline]
    pub fn predictor_cost(&self, x: &[f64], x2: &[f64]) -> f64 {
        if self.q == 2.0 && self.rho == 2.0 {
            return crate::linalg::squared_distance(x, x2);
        }
        let dist = lp_distance(x, x2, self.q);
        if self.rho == 1.0 {
            dist
        } else {
            dist.powf(self.rho)
        }
    }

    #[inline]
    pub fn cost(&self, x: &[f64], y: f64, x2: &[f64], y2: f64) -> Cost {
        if y != y2 {
            Cost::Infinite
        } else {
            Cost::Finite(self.predictor_cost(x, x2))
        }
    }

    /// Checked variant reporting a dimension mismatch.
    pub fn cost_checked(&self, x: &[f64], y: f64, x2: &[f64], y2: f64) -> Result<Cost> {
        if x.len() != x2.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: x2.len(),
            });
        }
        Ok(self.cost(x, y, x2, y2))
    }
}

/// Anything with predictors and a label can be an atom.
pub trait Atom {
    fn features(&self) -> &[f64];
    fn label(&self) -> f64;
}

impl Atom for crate::data::SupportPoint {
    fn features(&self) -> &[f64] {
        &self.x
    }
    fn label(&self) -> f64 {
        self.y
    }
}

impl Atom for crate::data::LabeledExample {
    fn features(&self) -> &[f64] {
        &self.x
    }
    fn label(&self) -> f64 {
        self.y
    }
}

/// Sparse coupling: `(from, to, mass)` triples with positive mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub entries: Vec<(usize, usize, f64)>,
}

impl TransportPlan {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.2).sum()
    }

    /// Mass leaving each `from` index, for indices `0..n_from`.
    pub fn from_marginal(&self, n_from: usize) -> Vec<f64> {
        let mut m = vec![0.0; n_from];
        for &(u, _, w) in &self.entries {
            m[u] += w;
        }
        m
    }

    /// Mass arriving at each `to` index, for indices `0..n_to`.
    pub fn to_marginal(&self, n_to: usize) -> Vec<f64> {
        let mut m = vec![0.0; n_to];
        for &(_, v, w) in &self.entries {
            m[v] += w;
        }
        m
    }
}

fn check_distribution(p: &[f64], n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.len(),
        });
    }
    if p.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::invalid(
            "probabilities must be finite and nonnegative",
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > MASS_TOL {
        return Err(Error::NotNormalized(total));
    }
    Ok(())
}

/// Solves the transportation LP between `p` and `q` (both weight vectors over
/// `atoms`). Returns `None` when no finite-cost coupling exists.
pub fn optimal_plan<A: Atom>(
    atoms: &[A],
    p: &[f64],
    q: &[f64],
    tc: &TransportCost,
) -> Result<Option<(TransportPlan, f64)>> {
    let n = atoms.len();
    if n == 0 {
        return Err(Error::Empty);
    }
    check_distribution(p, n)?;
    check_distribution(q, n)?;
    let d = atoms[0].features().len();
    if let Some(a) = atoms.iter().find(|a| a.features().len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: a.features().len(),
        });
    }

    let from: Vec<usize> = (0..n).filter(|&i| p[i] > 0.0).collect();
    let to: Vec<usize> = (0..n).filter(|&j| q[j] > 0.0).collect();
    let mut pairs = Vec::new();
    let mut costs = Vec::new();
    for &u in &from {
        for &v in &to {
            let (a, b) = (&atoms[u], &atoms[v]);
            if let Cost::Finite(c) = tc.cost(a.features(), a.label(), b.features(), b.label()) {
                pairs.push((u, v));
                costs.push(c);
            }
        }
    }
    if pairs.is_empty() {
        return Ok(None);
    }
    let mut lp = LinearProgram::new(Sense::Minimize, costs);
    for &u in &from {
        let terms: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, pr)| pr.0 == u)
            .map(|(k, _)| (k, 1.0))
            .collect();
        lp.add_sparse_constraint(&terms, Relation::Eq, p[u]);
    }
    for &v in &to {
        let terms: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .filter(|(_, pr)| pr.1 == v)
            .map(|(k, _)| (k, 1.0))
            .collect();
        lp.add_sparse_constraint(&terms, Relation::Eq, q[v]);
    }
    match lp.solve() {
        LpOutcome::Optimal { x, value } => {
            let entries = pairs
                .iter()
                .zip(&x)
                .filter(|(_, &w)| w > 0.0)
                .map(|(&(u, v), &w)| (u, v, w))
                .collect();
            Ok(Some((TransportPlan { entries }, value)))
        }
        _ => Ok(None),
    }
}

/// `D_c(P, Q)`: the minimum expected ground cost over couplings of `p` and
/// `q`; infinite when every coupling moves mass across labels.
pub fn discrepancy<A: Atom>(atoms: &[A], p: &[f64], q: &[f64], tc: &TransportCost) -> Result<Cost> {
    Ok(match optimal_plan(atoms, p, q, tc)? {
        Some((_, v)) => Cost::Finite(v.max(0.0)),
        None => Cost::Infinite,
    })
}

/// Largest deviations from the metric axioms of `D_c^{1/rho}` observed on
/// random distributions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub triples: usize,
    pub max_triangle_violation: f64,
    pub max_symmetry_gap: f64,
    pub max_self_distance: f64,
    /// Smallest `D_c^{1/rho}(P, Q)` seen for `P != Q`; must stay positive.
    pub min_distinct_distance: f64,
}

impl MetricReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_triangle_violation <= tol
            && self.max_symmetry_gap <= tol
            && self.max_self_distance <= tol
            && self.min_distinct_distance > 0.0
    }
}

fn random_distribution<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut w: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.7) {
                    rng.random::<f64>()
                } else {
                    0.0
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        if s > 0.0 {
            w.iter_mut().for_each(|v| *v /= s);
            return w;
        }
    }
}

/// Samples `triples` random triples of distributions on `atoms` and checks
/// symmetry, identity of indiscernibles and the triangle inequality of
/// `D_c^{1/rho}`. Triples involving infinite discrepancies are checked in the
/// extended reals.
pub fn metric_check<A: Atom, R: Rng + ?Sized>(
    atoms: &[A],
    tc: &TransportCost,
    triples: usize,
    rng: &mut R,
) -> Result<MetricReport> {
    let n = atoms.len();
    let root = |c: Cost| {
        c.finite()
            .map(|v| v.powf(1.0 / tc.rho()))
            .unwrap_or(f64::INFINITY)
    };
    let mut report = MetricReport {
        triples,
        min_distinct_distance: f64::INFINITY,
        ..Default::default()
    };
    for _ in 0..triples {
        let p = random_distribution(n, rng);
        let q = random_distribution(n, rng);
        let r = random_distribution(n, rng);
        let pq = discrepancy(atoms, &p, &q, tc)?;
        let qp = discrepancy(atoms, &q, &p, tc)?;
        let qr = discrepancy(atoms, &q, &r, tc)?;
        let pr = discrepancy(atoms, &p, &r, tc)?;
        let pp = discrepancy(atoms, &p, &p, tc)?;
        match (pq, qp) {
            (Cost::Finite(a), Cost::Finite(b)) => {
                report.max_symmetry_gap = report.max_symmetry_gap.max((a - b).abs())
            }
            (Cost::Infinite, Cost::Infinite) => {}
            _ => report.max_symmetry_gap = f64::INFINITY,
        }
        report.max_self_distance = report.max_self_distance.max(pp.to_f64());
        let (a, b, c) = (root(pr), root(pq), root(qr));
        if a.is_finite() {
            report.max_triangle_violation = report.max_triangle_violation.max(a - (b + c));
        } else if b.is_finite() && c.is_finite() {
            report.max_triangle_violation = f64::INFINITY;
        }
        report.min_distinct_distance = report.min_distinct_distance.min(b);
    }
    Ok(report)
}
