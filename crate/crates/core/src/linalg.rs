//! Small dense vector and matrix helpers.
//!
//! Matrices are row-major `Vec<f64>` of a known square size. Everything here
//! is sized for the handful of dimensions this crate deals with (feature
//! vectors, the `d x d` matrices of the limit laws), not for BLAS-scale work.

use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// The l_p norm for `p >= 1`, with `p = f64::INFINITY` giving the max norm.
pub fn lp_norm(a: &[f64], p: f64) -> f64 {
    if p == 1.0 {
        a.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        norm2(a)
    } else if p.is_infinite() {
        a.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else {
        a.iter().map(|v| v.abs().powf(p)).sum::<f64>().powf(1.0 / p)
    }
}

/// l_q norm of the difference `a - b`.
pub fn lp_distance(a: &[f64], b: &[f64], q: f64) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b);
    if q == 1.0 {
        diff.map(|(x, y)| (x - y).abs()).sum()
    } else if q == 2.0 {
        diff.map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    } else if q.is_infinite() {
        diff.fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    } else {
        diff.map(|(x, y)| (x - y).abs().powf(q))
            .sum::<f64>()
            .powf(1.0 / q)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `M v` for a row-major `d x d` matrix.
pub fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    m.chunks_exact(d).map(|row| dot(row, v)).collect()
}

/// `v^T M v`
pub fn quad_form(m: &[f64], v: &[f64]) -> f64 {
    let d = v.len();
    let mut acc = 0.0;
    for i in 0..d {
        acc += v[i] * dot(&m[i * d..(i + 1) * d], v);
    }
    acc
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    pub fn new(m: &[f64], dim: usize) -> Result<Self> {
        if m.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: m.len(),
            });
        }
        let mut l = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let mut s = m[i * dim + j];
                for k in 0..j {
                    s -= l[i * dim + k] * l[j * dim + k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite);
                    }
                    l[i * dim + i] = s.sqrt();
                } else {
                    l[i * dim + j] = s / l[j * dim + j];
                }
            }
        }
        Ok(Cholesky { dim, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `L z`, mapping a standard normal vector to one with covariance `M`.
    pub fn lower_mul(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| dot(&self.lower[i * d..i * d + i + 1], &z[..=i]))
            .collect()
    }

    /// Solves `M x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut y = b.to_vec();
        for i in 0..d {
            for k in 0..i {
                y[i] -= self.lower[i * d + k] * y[k];
            }
            y[i] /= self.lower[i * d + i];
        }
        for i in (0..d).rev() {
            for k in i + 1..d {
                y[i] -= self.lower[k * d + i] * y[k];
            }
            y[i] /= self.lower[i * d + i];
        }
        y
    }

    pub fn log_det(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.lower[i * self.dim + i].ln())
            .sum::<f64>()
            * 2.0
    }
}

/// Solves a symmetric positive definite system, adding a growing ridge to the
/// diagonal until the factorization succeeds.
pub fn solve_spd_regularized(m: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let d = b.len();
    let scale = (0..d)
        .map(|i| m[i * d + i].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let mut ridge = 0.0;
    for _ in 0..40 {
        let mut a = m.to_vec();
        for i in 0..d {
            a[i * d + i] += ridge;
        }
        if let Ok(ch) = Cholesky::new(&a, d) {
            return Ok(ch.solve(b));
        }
        ridge = if ridge == 0.0 {
            scale * 1e-14
        } else {
            ridge * 10.0
        };
    }
    Err(Error::NotPositiveDefinite)
}
