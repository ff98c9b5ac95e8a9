//! Dense two-phase primal simplex for the small linear programs that serve as
//! exact references: transportation problems, the budgeted inner
//! maximization, and the primal profile LP.
//!
//! Pricing is Dantzig's rule; after a run of degenerate pivots the solver
//! switches to Bland's rule, which cannot cycle.

use alloc::vec;
use alloc::vec::Vec;

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    LessEq,
    Eq,
    GreaterEq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub relation: Relation,
    pub rhs: f64,
}

/// `opt c^T x  s.t.  A x (<=|=|>=) b,  x >= 0`.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    sense: Sense,
    objective: Vec<f64>,
    constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<f64>) -> Self {
        LinearProgram {
            sense,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_constraint(&mut self, coeffs: Vec<f64>, relation: Relation, rhs: f64) {
        assert_eq!(coeffs.len(), self.objective.len(), "constraint width");
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
    }

    /// Adds a constraint given as `(variable, coefficient)` pairs.
    pub fn add_sparse_constraint(&mut self, terms: &[(usize, f64)], relation: Relation, rhs: f64) {
        let mut coeffs = vec![0.0; self.objective.len()];
        for &(j, a) in terms {
            coeffs[j] += a;
        }
        self.add_constraint(coeffs, relation, rhs);
    }

    pub fn solve(&self) -> LpOutcome {
        let n = self.objective.len();
        let m = self.constraints.len();
        let min_obj: Vec<f64> = match self.sense {
            Sense::Minimize => self.objective.clone(),
            Sense::Maximize => self.objective.iter().map(|c| -c).collect(),
        };
        if m == 0 {
            // Only x >= 0: optimal at zero unless some cost is negative.
            if min_obj.iter().any(|&c| c < 0.0) {
                return LpOutcome::Unbounded;
            }
            return LpOutcome::Optimal {
                x: vec![0.0; n],
                value: 0.0,
            };
        }

        // Normalize to nonnegative right-hand sides.
        let rows: Vec<(Vec<f64>, Relation, f64)> = self
            .constraints
            .iter()
            .map(|c| {
                if c.rhs < 0.0 {
                    let rel = match c.relation {
                        Relation::LessEq => Relation::GreaterEq,
                        Relation::GreaterEq => Relation::LessEq,
                        Relation::Eq => Relation::Eq,
                    };
                    (c.coeffs.iter().map(|a| -a).collect(), rel, -c.rhs)
                } else {
                    (c.coeffs.clone(), c.relation, c.rhs)
                }
            })
            .collect();

        let n_slack = rows.iter().filter(|r| r.1 != Relation::Eq).count();
        let n_art = rows.iter().filter(|r| r.1 != Relation::LessEq).count();
        let cols = n + n_slack + n_art;
        let width = cols + 1;
        let mut tab = Tableau {
            m,
            cols,
            width,
            data: vec![0.0; (m + 1) * width],
            basis: vec![0; m],
            active: vec![true; m],
        };
        let art_start = n + n_slack;
        let mut slack = n;
        let mut art = art_start;
        for (i, (coeffs, rel, rhs)) in rows.iter().enumerate() {
            tab.data[i * width..i * width + n].copy_from_slice(coeffs);
            tab.data[i * width + cols] = *rhs;
            match rel {
                Relation::LessEq => {
                    tab.data[i * width + slack] = 1.0;
                    tab.basis[i] = slack;
                    slack += 1;
                }
                Relation::GreaterEq => {
                    tab.data[i * width + slack] = -1.0;
                    slack += 1;
                    tab.data[i * width + art] = 1.0;
                    tab.basis[i] = art;
                    art += 1;
                }
                Relation::Eq => {
                    tab.data[i * width + art] = 1.0;
                    tab.basis[i] = art;
                    art += 1;
                }
            }
        }
        let rhs_scale = rows.iter().fold(1.0f64, |s, r| s.max(r.2.abs()));

        // Phase 1: minimize the sum of artificials.
        if n_art > 0 {
            let obj = m * width;
            for i in 0..m {
                if tab.basis[i] >= art_start {
                    for j in 0..width {
                        if j < art_start || j == cols {
                            tab.data[obj + j] -= tab.data[i * width + j];
                        }
                    }
                }
            }
            if tab.run(art_start).is_err() {
                // Phase 1 is bounded below by zero; this cannot happen.
                return LpOutcome::Infeasible;
            }
            let infeasibility = -tab.data[m * width + cols];
            if infeasibility > FEAS_TOL * rhs_scale {
                return LpOutcome::Infeasible;
            }
            // Drive remaining artificials out of the basis or drop redundant rows.
            for i in 0..m {
                if !tab.active[i] || tab.basis[i] < art_start {
                    continue;
                }
                let row = i * width;
                let entering = (0..art_start)
                    .filter(|&j| tab.data[row + j].abs() > 1e-9)
                    .max_by(|&a, &b| {
                        tab.data[row + a]
                            .abs()
                            .partial_cmp(&tab.data[row + b].abs())
                            .unwrap()
                    });
                match entering {
                    Some(j) => tab.pivot(i, j),
                    None => tab.active[i] = false,
                }
            }
        }

        // Phase 2.
        let obj = m * width;
        for j in 0..width {
            tab.data[obj + j] = 0.0;
        }
        tab.data[obj..obj + n].copy_from_slice(&min_obj);
        for i in 0..m {
            if !tab.active[i] {
                continue;
            }
            let b = tab.basis[i];
            let cb = if b < n { min_obj[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..width {
                    tab.data[obj + j] -= cb * tab.data[i * width + j];
                }
            }
        }
        if tab.run(art_start).is_err() {
            return LpOutcome::Unbounded;
        }

        let mut x = vec![0.0; n];
        for i in 0..m {
            if tab.active[i] && tab.basis[i] < n {
                x[tab.basis[i]] = tab.data[i * width + cols].max(0.0);
            }
        }
        let value_min: f64 = x.iter().zip(&min_obj).map(|(a, c)| a * c).sum();
        let value = match self.sense {
            Sense::Minimize => value_min,
            Sense::Maximize => -value_min,
        };
        LpOutcome::Optimal { x, value }
    }
}

struct Tableau {
    m: usize,
    cols: usize,
    width: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    active: Vec<bool>,
}

struct UnboundedLp;

impl Tableau {
    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let p = self.data[r * w + c];
        for j in 0..w {
            self.data[r * w + j] /= p;
        }
        self.data[r * w + c] = 1.0;
        let pivot_row: Vec<f64> = self.data[r * w..(r + 1) * w].to_vec();
        for i in 0..=self.m {
            if i == r || (i < self.m && !self.active[i]) {
                continue;
            }
            let f = self.data[i * w + c];
            if f != 0.0 {
                let row = &mut self.data[i * w..(i + 1) * w];
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                row[c] = 0.0;
            }
        }
        self.basis[r] = c;
    }

    /// Runs simplex iterations over columns `0..allowed`.
    fn run(&mut self, allowed: usize) -> core::result::Result<(), UnboundedLp> {
        let w = self.width;
        let obj = self.m * w;
        let mut degenerate_run = 0usize;
        let bland_after = 50 + 2 * self.m;
        let max_iter = 50_000 + 50 * (self.m + self.cols);
        for _ in 0..max_iter {
            let use_bland = degenerate_run > bland_after;
            let mut entering = None;
            let mut best = -COST_TOL;
            for j in 0..allowed {
                let d = self.data[obj + j];
                if d < best {
                    entering = Some(j);
                    if use_bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(c) = entering else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.m {
                if !self.active[i] {
                    continue;
                }
                let a = self.data[i * w + c];
                if a > PIVOT_TOL {
                    let ratio = self.data[i * w + self.cols].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-12
                                || (ratio <= br + 1e-12 && self.basis[i] < self.basis[bi])
                            {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((r, ratio)) = leave else {
                return Err(UnboundedLp);
            };
            if ratio <= 1e-14 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.pivot(r, c);
        }
        // Iteration cap: treat the current basis as final. Bland's rule
        // terminates, so this is only reached on pathological inputs.
        Ok(())
    }
}
