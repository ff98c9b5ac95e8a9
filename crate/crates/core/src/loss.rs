//! Loss models `l(x, y, beta)`.
//!
//! Both losses depend on `beta` only through the margin `z = beta^T x`, so the
//! gradient is always a scalar multiple of `x`; [`Loss::dz`] exposes that
//! scalar for the hot loops. No intercept is added here: append a constant
//! feature with [`crate::data::with_intercept`] when one is wanted.

use alloc::vec::Vec;
#[allow(unused_imports)] // inherent when std is linked
use num_traits::Float;

use crate::linalg::dot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Loss {
    /// `log(1 + exp(-y beta^T x))`, labels in `{-1, +1}`.
    Logistic,
    /// `(y - beta^T x)^2`.
    Squared,
}

/// `log(1 + exp(t))` without overflow.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// The logistic function `1 / (1 + exp(-t))`.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

impl Loss {
    /// Loss as a function of the margin `z = beta^T x`.
    #[inline]
    pub fn of_margin(self, z: f64, y: f64) -> f64 {
        match self {
            Loss::Logistic => log1p_exp(-y * z),
            Loss::Squared => (y - z) * (y - z),
        }
    }

    /// `d l / d z`; the gradient in `beta` is `dz(z, y) * x`.
    #[inline]
    pub fn dz(self, z: f64, y: f64) -> f64 {
        match self {
            Loss::Logistic => -y * sigmoid(-y * z),
            Loss::Squared => -2.0 * (y - z),
        }
    }

    /// `d^2 l / d z^2`.
    #[inline]
    pub fn dzz(self, z: f64, y: f64) -> f64 {
        match self {
            Loss::Logistic => {
                let s = sigmoid(y * z);
                s * (1.0 - s)
            }
            Loss::Squared => 2.0,
        }
    }

    pub fn value(self, x: &[f64], y: f64, beta: &[f64]) -> f64 {
        self.of_margin(dot(beta, x), y)
    }

    pub fn grad(self, x: &[f64], y: f64, beta: &[f64]) -> Vec<f64> {
        let s = self.dz(dot(beta, x), y);
        x.iter().map(|v| s * v).collect()
    }

    /// Adds `weight * grad` into `out`.
    pub fn add_grad(self, x: &[f64], y: f64, beta: &[f64], weight: f64, out: &mut [f64]) {
        let s = weight * self.dz(dot(beta, x), y);
        crate::linalg::axpy(s, x, out);
    }
}

impl core::str::FromStr for Loss {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logistic" => Ok(Loss::Logistic),
            "squared" => Ok(Loss::Squared),
            other => Err(crate::Error::invalid(alloc::format!(
                "unknown loss {other:?}"
            ))),
        }
    }
}

impl core::fmt::Display for Loss {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Loss::Logistic => "logistic",
            Loss::Squared => "squared",
        })
    }
}
