//! Variance-reduced temporal-difference policy evaluation with linear
//! function approximation, together with exact instance-dependent lower
//! bounds.
//!
//! Modules, bottom up:
//! - [`mrp`]: Markov reward processes, stationary distributions, mixing.
//! - [`projection`]: feature geometry, projected fixed point, deterministic operator.
//! - [`sampling`]: observation models, stochastic operator, noise constants.
//! - [`algorithms`]: TD, extrapolated TD and the variance-reduced epoch methods.
//! - [`bounds`]: hard instance and covariance trace functionals.
//! - [`instances`]: generators for the standard test problems.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algorithms;
pub mod bounds;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod mrp;
pub mod projection;
pub mod sampling;

pub use error::{Error, Result};
