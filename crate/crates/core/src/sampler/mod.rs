//! Gradient-based MCMC over an unconstrained space.
//!
//! The default transition is a multinomial no-U-turn sampler with a diagonal
//! metric; static HMC is available through [`Algorithm::StaticHmc`].
//! Warmup adapts the step size by dual averaging toward
//! [`SamplerConfig::target_accept`] and the inverse metric from windowed
//! variance estimates (see `adapt`). Chains run in parallel, each with its own
//! ChaCha8 stream `(seed, chain index)`, so output is bit-reproducible for a
//! fixed configuration regardless of thread scheduling.

mod adapt;
mod diagnostics;
mod nuts;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::JointPosterior;

pub use diagnostics::{ess_chains, split_rhat};
pub use nuts::MAX_DELTA_H;

use adapt::{DualAveraging, WindowedVariance};
use nuts::{Hamiltonian, Point, TransitionInfo};

/// A differentiable log density on `R^dim`.
pub trait Target: Sync {
    fn dim(&self) -> usize;

    /// Log density at `x`; the gradient is written into `grad`.
    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64>;

    /// Names of the recorded output values.
    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|k| format!("x[{}]", k + 1)).collect()
    }

    /// Maps an unconstrained state to the recorded output values.
    fn constrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(x.to_vec())
    }
}

impl Target for JointPosterior {
    fn dim(&self) -> usize {
        JointPosterior::dim(self)
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.log_posterior_and_gradient(x, grad)
    }

    fn param_names(&self) -> Vec<String> {
        JointPosterior::param_names(self)
    }

    fn constrain(&self, x: &[f64]) -> Result<Vec<f64>> {
        JointPosterior::constrain(self, x)
    }
}

/// Trajectory scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Multinomial no-U-turn trajectories.
    Nuts,
    /// Up to `steps` leapfrog steps (count drawn uniformly per transition)
    /// with a Metropolis correction.
    StaticHmc { steps: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Scale of the random perturbation applied to starting points.
    pub init_jitter: f64,
    /// Adapt step size and metric during warmup.
    pub adapt: bool,
    /// Step size used when adaptation is off.
    pub step_size: f64,
    pub algorithm: Algorithm,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            samples: 1000,
            seed: 1,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_jitter: 2.0,
            adapt: true,
            step_size: 0.1,
            algorithm: Algorithm::Nuts,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(invalid("chains", "must be at least 1"));
        }
        if self.samples == 0 {
            return Err(invalid("samples", "must be at least 1"));
        }
        if self.adapt && self.warmup < 100 {
            return Err(invalid(
                "warmup",
                format!(
                    "must be at least 100 when adaptation is enabled, got {}",
                    self.warmup
                ),
            ));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(invalid("target_accept", "must lie in (0, 1)"));
        }
        if self.max_tree_depth == 0 {
            return Err(invalid("max_tree_depth", "must be at least 1"));
        }
        if !(self.init_jitter >= 0.0 && self.init_jitter.is_finite()) {
            return Err(invalid("init_jitter", "must be nonnegative"));
        }
        if !self.adapt && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size", "must be positive"));
        }
        if let Algorithm::StaticHmc { steps } = self.algorithm {
            if steps == 0 {
                return Err(invalid("algorithm", "static HMC needs at least one step"));
            }
        }
        Ok(())
    }

    /// RNG for `chain`: seeded by `seed`, stream selected by the chain index.
    pub fn chain_rng(&self, chain: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(chain as u64);
        rng
    }
}

/// Per-chain sampler statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    /// Divergent transitions after warmup.
    pub divergences: usize,
    pub warmup_divergences: usize,
    /// Step size used after warmup.
    pub step_size: f64,
    /// Mean acceptance statistic after warmup.
    pub mean_accept_stat: f64,
    pub mean_tree_depth: f64,
    pub leapfrog_steps: usize,
    /// Adapted inverse metric (diagonal).
    pub inv_metric: Vec<f64>,
}

/// Post-warmup draws on the output scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    chains: usize,
    samples: usize,
    /// Chain-major, then iteration, then parameter.
    values: Vec<f64>,
    pub diagnostics: Vec<ChainDiagnostics>,
}

impl PosteriorDraws {
    /// Builds draws from per-chain rows (`chains[c][iter][param]`).
    pub fn from_chains(names: Vec<String>, chains: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let n_chains = chains.len();
        let samples = chains.first().map_or(0, Vec::len);
        let dim = names.len();
        let mut values = Vec::with_capacity(n_chains * samples * dim);
        for c in &chains {
            if c.len() != samples {
                return Err(invalid("draws", "chains have different lengths"));
            }
            for row in c {
                if row.len() != dim {
                    return Err(invalid("draws", "row length does not match the names"));
                }
                values.extend_from_slice(row);
            }
        }
        Ok(Self {
            names,
            chains: n_chains,
            samples,
            values,
            diagnostics: Vec::new(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_chains(&self) -> usize {
        self.chains
    }

    pub fn n_samples(&self) -> usize {
        self.samples
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, chain: usize, iter: usize, param: usize) -> f64 {
        self.values[(chain * self.samples + iter) * self.dim() + param]
    }

    /// One full output row.
    pub fn row(&self, chain: usize, iter: usize) -> &[f64] {
        let d = self.dim();
        let start = (chain * self.samples + iter) * d;
        &self.values[start..start + d]
    }

    /// Per-chain sequences of parameter `param`.
    pub fn chains_of(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| (0..self.samples).map(|i| self.get(c, i, param)).collect())
            .collect()
    }

    /// All draws of parameter `param`, chains concatenated.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.chains_of(param).concat()
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| invalid("name", format!("no parameter named `{name}`")))
    }

    pub fn total_divergences(&self) -> usize {
        self.diagnostics.iter().map(|d| d.divergences).sum()
    }
}

/// Split-chain R̂ of the named parameter.
pub fn rhat(draws: &PosteriorDraws, name: &str) -> Result<f64> {
    split_rhat(&draws.chains_of(draws.require(name)?))
}

/// Effective sample size of the named parameter.
pub fn ess(draws: &PosteriorDraws, name: &str) -> Result<f64> {
    ess_chains(&draws.chains_of(draws.require(name)?))
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// A finite starting point for `post`: data-informed centres plus jitter,
/// retried up to 100 times until the log posterior and gradient are finite.
pub fn initialize<R: Rng + ?Sized>(
    post: &JointPosterior,
    rng: &mut R,
    cfg: &SamplerConfig,
) -> Result<Vec<f64>> {
    if post.data().is_empty() {
        return Err(invalid("data", "no subjects"));
    }
    let mut grad = vec![0.0; post.dim()];
    for _ in 0..100 {
        let theta = post.initial_point(rng, cfg.init_jitter);
        if post.log_posterior_and_gradient(&theta, &mut grad).is_ok() {
            return Ok(theta);
        }
    }
    Err(Error::Sampler(
        "no finite starting point found after 100 attempts".into(),
    ))
}

struct ChainOutput {
    rows: Vec<Vec<f64>>,
    diag: ChainDiagnostics,
}

fn transition<T: Target + ?Sized>(
    ham: &Hamiltonian<'_, T>,
    z: &mut Point,
    eps: f64,
    cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> TransitionInfo {
    match cfg.algorithm {
        Algorithm::Nuts => ham.nuts_transition(z, eps, cfg.max_tree_depth, rng),
        Algorithm::StaticHmc { steps } => ham.static_transition(z, eps, steps, rng),
    }
}

fn run_chain<T: Target + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = cfg.chain_rng(chain);
    let dim = target.dim();
    let mut z = Point::new(target, init.to_vec());
    let mut attempts = 0;
    while !z.logp.is_finite() {
        attempts += 1;
        if attempts > 100 {
            return Err(Error::Sampler(format!(
                "chain {chain}: log density not finite at the initial point or 100 jittered retries"
            )));
        }
        let q: Vec<f64> = init
            .iter()
            .map(|v| v + cfg.init_jitter * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        z = Point::new(target, q);
    }
    let mut ham = Hamiltonian {
        target,
        inv_metric: vec![1.0; dim],
    };
    let adapt = cfg.adapt && cfg.warmup > 0;
    let mut eps = if adapt {
        ham.init_step_size(&z, 1.0, &mut rng)
            .map_err(|e| Error::Sampler(format!("chain {chain}: {e}")))?
    } else {
        cfg.step_size
    };
    let mut da = DualAveraging::new(cfg.target_accept);
    da.restart(eps);
    let mut windows = WindowedVariance::new(dim, cfg.warmup);
    let mut warmup_divergences = 0;
    for _ in 0..cfg.warmup {
        let info = transition(&ham, &mut z, eps, cfg, &mut rng);
        warmup_divergences += info.divergent as usize;
        if adapt {
            eps = da.learn(info.accept_stat);
            let mut metric = std::mem::take(&mut ham.inv_metric);
            let updated = windows.learn(&mut metric, &z.q);
            ham.inv_metric = metric;
            if updated {
                eps = ham
                    .init_step_size(&z, eps, &mut rng)
                    .map_err(|e| Error::Sampler(format!("chain {chain}: {e}")))?;
                da.restart(eps);
            }
        }
    }
    if adapt {
        eps = da.final_step_size();
    }
    let mut rows = Vec::with_capacity(cfg.samples);
    let mut divergences = 0;
    let mut accept_sum = 0.0;
    let mut depth_sum = 0usize;
    let mut leapfrog_steps = 0;
    for _ in 0..cfg.samples {
        let info = transition(&ham, &mut z, eps, cfg, &mut rng);
        divergences += info.divergent as usize;
        accept_sum += info.accept_stat;
        depth_sum += info.depth;
        leapfrog_steps += info.n_leapfrog;
        rows.push(target.constrain(&z.q)?);
    }
    let n = cfg.samples as f64;
    Ok(ChainOutput {
        rows,
        diag: ChainDiagnostics {
            divergences,
            warmup_divergences,
            step_size: eps,
            mean_accept_stat: accept_sum / n,
            mean_tree_depth: depth_sum as f64 / n,
            leapfrog_steps,
            inv_metric: ham.inv_metric,
        },
    })
}

/// Runs `cfg.chains` chains from the same starting point.
pub fn sample<T: Target + ?Sized>(
    target: &T,
    init: &[f64],
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    let inits = vec![init.to_vec(); cfg.chains];
    sample_with_inits(target, &inits, cfg)
}

/// Runs one chain per starting point in `inits` (`inits.len() == cfg.chains`).
pub fn sample_with_inits<T: Target + ?Sized>(
    target: &T,
    inits: &[Vec<f64>],
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    cfg.validate()?;
    if inits.len() != cfg.chains {
        return Err(invalid(
            "inits",
            format!(
                "expected {} starting points, got {}",
                cfg.chains,
                inits.len()
            ),
        ));
    }
    if let Some(bad) = inits.iter().position(|x| x.len() != target.dim()) {
        return Err(invalid(
            "inits",
            format!("starting point {bad} has the wrong dimension"),
        ));
    }
    let outputs: Vec<ChainOutput> = (0..cfg.chains)
        .into_par_iter()
        .map(|c| run_chain(target, &inits[c], cfg, c))
        .collect::<Result<_>>()?;
    let names = target.param_names();
    let mut diagnostics = Vec::with_capacity(outputs.len());
    let mut chains = Vec::with_capacity(outputs.len());
    for o in outputs {
        diagnostics.push(o.diag);
        chains.push(o.rows);
    }
    let mut draws = PosteriorDraws::from_chains(names, chains)?;
    draws.diagnostics = diagnostics;
    Ok(draws)
}
