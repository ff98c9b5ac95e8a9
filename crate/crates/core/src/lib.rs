//! Semi-supervised distributionally robust optimization (SSL-DRO).
//!
//! Models are fitted by minimizing the worst-case expected loss over an
//! optimal-transport ball around the empirical distribution of the labeled
//! data, where the adversary may only place mass on the labeled points and on
//! the unlabeled predictors replicated under both labels.
//!
//! The crate is `no_std` (it needs `alloc`). File formats, the CLI and the
//! experiment drivers live in the `ssldro` companion crate.
//!
//! Module map:
//!
//! - [`data`]: labeled/unlabeled examples, the augmented support set, splits
//!   and standardization.
//! - [`transport`]: ground cost and exact optimal transport discrepancy.
//! - [`loss`]: logistic and squared losses with their gradients.
//! - [`objective`]: the per-sample dual objective, its log-sum-exp smoothing,
//!   gradients, and the exact inner maximization.
//! - [`mlmc`]: unbiased randomized multilevel Monte Carlo gradient estimates.
//! - [`solver`]: SGD and deterministic training, cross-validation of the
//!   radius, and the norm-regularized logistic baseline.
//! - [`rwp`]: the robust Wasserstein profile for linear regression, samplers
//!   for its limit laws, and quantile-based radius selection.
#![no_std]
// `!(x >= 0.0)` is the NaN-rejecting validation idiom used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod linalg;
pub mod loss;
pub mod lp;
pub mod mlmc;
pub mod objective;
pub mod rwp;
pub mod solver;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
