//! Bayesian joint model for a longitudinal outcome with a subject-specific
//! change point that is bounded above by the subject's event time.
//!
//! The crate is organised bottom-up:
//!
//! - [`truncnorm`]: scalar normal and truncated-normal primitives.
//! - [`ptmvn`]: the partially truncated multivariate normal distribution
//!   (one coordinate, the change point, restricted to an interval).
//! - [`model`]: data records, priors, the unconstrained parameterisation and
//!   the joint log-posterior with its analytic gradient.
//! - [`sampler`]: a multinomial no-U-turn sampler with windowed warmup and
//!   split-R̂ / ESS diagnostics.
//! - [`marginal`]: marginal moments of the outcome given the event time and
//!   the population mean change point.
//! - [`sim`]: data generator, censoring calibration and the replication
//!   harness for bias / MSE / coverage.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod fit;
pub mod marginal;
pub mod model;
pub mod ptmvn;
pub mod quad;
pub mod sampler;
pub mod sim;
pub mod truncnorm;

pub use error::{Error, Result};
