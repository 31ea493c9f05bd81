//! Joint model: data records, parameters, priors and the log posterior.
//!
//! For subject `i` with change point `ω_i`, random coefficients
//! `b_i = (b0, b1, b2)` and visit times `s_ij`, the outcome is
//!
//! ```text
//! y_ij = x_ij′β + b0 + b1 (s_ij − ω_i) 1{s_ij ≤ ω_i} + b2 (s_ij − ω_i) 1{s_ij > ω_i} + ε_ij
//! ```
//!
//! with `ε_ij ~ N(0, σ_y²)`. Event times follow a Weibull proportional
//! hazards model and `(ω_i, b_i)` follow a PTMVN with `ω_i ∈ (0, t_i*)`.

mod data;
mod density;
mod params;
mod posterior;
mod priors;

pub use data::{Dataset, SubjectRecord};
pub use density::{longitudinal_loglik, piecewise_mean, weibull_ph_logpdf, weibull_ph_logsurv};
pub use params::{
    cholesky_lower, corr_cholesky_from_unconstrained, unconstrained_from_corr, ModelParams, N_CORR,
    N_RE,
};
pub use posterior::{Decoded, JointPosterior, Layout, LogPostBreakdown, ModelKind, SubjectLatent};
pub use priors::{correlation_logprior, gnd_logpdf, GndPrior, PriorConfig};
