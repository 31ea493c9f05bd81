//! Fitting entry points: starting points, sampling and posterior summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{Dataset, JointPosterior, ModelKind, PriorConfig};
use crate::sampler::{
    ess_chains, initialize, quantile_sorted, sample_with_inits, split_rhat, PosteriorDraws,
    SamplerConfig,
};

/// Structural parameters reported for a single-covariate joint model.
pub const STRUCTURAL_PARAMS: [&str; 13] = [
    "gamma[1]",
    "eta",
    "alpha",
    "beta[1]",
    "sigma_y",
    "mu_omega",
    "mu_b0",
    "mu_b1",
    "mu_b2",
    "sigma_omega",
    "sigma_b0",
    "sigma_b1",
    "sigma_b2",
];

/// Posterior summary of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    /// `None` when too few chains or draws.
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
}

/// Summaries of every recorded parameter, in output order. Chains are pooled.
pub fn summarize_draws(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    (0..draws.dim())
        .map(|k| {
            let chains = draws.chains_of(k);
            let mut all = chains.concat();
            let n = all.len() as f64;
            let mean = all.iter().sum::<f64>() / n;
            let sd = if all.len() > 1 {
                (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            all.sort_by(f64::total_cmp);
            ParamSummary {
                name: draws.names()[k].clone(),
                mean,
                sd,
                q025: quantile_sorted(&all, 0.025),
                q50: quantile_sorted(&all, 0.5),
                q975: quantile_sorted(&all, 0.975),
                rhat: split_rhat(&chains).ok(),
                ess: ess_chains(&chains).ok(),
            }
        })
        .collect()
}

/// One starting point per chain, each from its own deterministic stream.
pub fn initial_points(post: &JointPosterior, cfg: &SamplerConfig) -> Result<Vec<Vec<f64>>> {
    (0..cfg.chains)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            // Streams below 2^32 belong to the sampler itself.
            rng.set_stream((1u64 << 32) + c as u64);
            initialize(post, &mut rng, cfg)
        })
        .collect()
}

/// Samples the posterior of `kind` for `data`.
pub fn fit(
    data: &Dataset,
    priors: &PriorConfig,
    kind: ModelKind,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    let post = JointPosterior::new(data.clone(), priors.clone(), kind)?;
    fit_posterior(&post, cfg)
}

pub fn fit_posterior(post: &JointPosterior, cfg: &SamplerConfig) -> Result<PosteriorDraws> {
    cfg.validate()?;
    let inits = initial_points(post, cfg)?;
    sample_with_inits(post, &inits, cfg)
}
