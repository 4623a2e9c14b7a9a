//! Nonparametric, heteroscedastic prediction bands.
//!
//! A band is fitted by a semi-definite program that finds the minimum-trace
//! sum-of-squares variance function `v̂(x) = ⟨k_x, B̂ k_x⟩` covering every
//! squared training residual, optionally learning a kernel mean `m̂(x)` at the
//! same time. Bands are `m̂(x) ± √((1+δ)·v̂(x))`, with `δ` calibrated on held-out
//! data. The crate carries its own operator-splitting conic solver, baselines
//! (simple linear regression, split and full conformal), simulation designs and
//! an experiment runner.

pub mod baselines;
pub mod calibrate;
pub mod conic;
pub mod dgp;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod linalg;
pub mod metrics;
pub mod sdpband;

pub use error::{Error, Result};
