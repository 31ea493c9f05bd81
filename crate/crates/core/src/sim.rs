//! Data generation, censoring calibration and the replication harness.
//!
//! Each simulated subject gets covariates drawn as independent
//! Bernoulli(0.5) values; the survival vector `w` and the longitudinal row
//! `x` are prefixes of the same draw, so with one coefficient each the two
//! submodels share a single binary covariate. Event times follow the Weibull
//! PH model, censoring times an exponential law, `(ω, b)` the PTMVN with
//! `ω ∈ (0, t*)`, and visits are scheduled at `s*_j = |0.1 j − z_j|` with
//! `z_j ~ N⁺(0, 0.02²)` while `s*_j ≤ t_obs`. A subject whose observed time
//! precedes the first scheduled visit gets one visit at
//! `min(0.1 s*_1, t_obs)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fit::{fit, summarize_draws};
use crate::model::{
    piecewise_mean, Dataset, ModelKind, ModelParams, PriorConfig, SubjectLatent, SubjectRecord,
};
use crate::ptmvn::ptmvn_sample;
use crate::sampler::{PosteriorDraws, SamplerConfig};

/// Parameters reported by the replication study, in table order.
pub const TABLE_PARAMS: [&str; 10] = [
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

/// Fraction of failed fits above which a replication study is abandoned.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimScenario {
    /// Subjects per dataset.
    pub n: usize,
    /// Target censoring fraction.
    pub target_censoring: f64,
    pub truth: ModelParams,
    /// Nominal spacing between scheduled visits (years).
    pub visit_interval: f64,
    /// Scale of the half-normal visit-time perturbation (years).
    pub visit_jitter: f64,
    /// Hard cap on visits per subject.
    pub max_visits: usize,
    /// Replications for [`replication_study`].
    pub replications: usize,
    pub seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            n: 100,
            target_censoring: 0.2,
            truth: ModelParams::reference_truth(),
            visit_interval: 0.1,
            visit_jitter: 0.02,
            max_visits: 200,
            replications: 100,
            seed: 1,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(
                "n",
                format!("need at least 2 subjects, got {}", self.n),
            ));
        }
        if !(self.target_censoring > 0.0 && self.target_censoring < 1.0) {
            return Err(invalid(
                "target_censoring",
                format!("must lie in (0, 1), got {}", self.target_censoring),
            ));
        }
        if !(self.visit_interval > 0.0) || !(self.visit_jitter >= 0.0) {
            return Err(invalid("visit_interval", "visit spacing must be positive"));
        }
        if self.max_visits == 0 {
            return Err(invalid("max_visits", "must be at least 1"));
        }
        self.truth.validate()
    }

    fn n_covariates(&self) -> usize {
        self.truth.gamma.len().max(self.truth.beta.len())
    }
}

/// Covariates and event time of one subject, before censoring.
struct EventDraw {
    cov: Vec<f64>,
    t_star: f64,
}

fn draw_event<R: Rng + ?Sized>(scn: &SimScenario, rng: &mut R) -> EventDraw {
    let p = &scn.truth;
    let cov: Vec<f64> = (0..scn.n_covariates())
        .map(|_| if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 })
        .collect();
    let lp: f64 = cov.iter().zip(&p.gamma).map(|(a, b)| a * b).sum();
    let e: f64 = Exp1.sample(rng);
    let t_star = (e / (p.eta * lp.exp())).powf(1.0 / p.alpha);
    EventDraw { cov, t_star }
}

/// Scheduled visit times `s*_j`, `j = 1, 2, …`, stopping at the first one
/// beyond `t_obs` (which is returned separately) or at the visit cap.
pub fn visit_schedule<R: Rng + ?Sized>(
    scn: &SimScenario,
    t_obs: f64,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let mut visits = Vec::new();
    let mut prev = 0.0;
    let mut j = 1;
    loop {
        // Redraw in the (practically impossible) event of a non-increasing schedule.
        let s = loop {
            let z: f64 = rng.sample::<f64, _>(StandardNormal).abs() * scn.visit_jitter;
            let s = (scn.visit_interval * j as f64 - z).abs();
            if s > prev {
                break s;
            }
        };
        if s > t_obs || visits.len() >= scn.max_visits {
            return (visits, s);
        }
        visits.push(s);
        prev = s;
        j += 1;
    }
}

/// A simulated dataset together with the latent values that generated it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    /// Per subject, in dataset order; `t_star` is the uncensored event time.
    pub latent: Vec<SubjectLatent>,
}

/// One simulated dataset of `scn.n` subjects.
pub fn generate_dataset<R: Rng + ?Sized>(
    scn: &SimScenario,
    censor_rate: f64,
    rng: &mut R,
) -> Result<Dataset> {
    simulate(scn, censor_rate, rng).map(|s| s.data)
}

/// As [`generate_dataset`], also returning the latent values.
pub fn simulate<R: Rng + ?Sized>(
    scn: &SimScenario,
    censor_rate: f64,
    rng: &mut R,
) -> Result<Simulated> {
    scn.validate()?;
    if !(censor_rate > 0.0 && censor_rate.is_finite()) {
        return Err(invalid(
            "censor_rate",
            format!("must be positive, got {censor_rate}"),
        ));
    }
    let p = &scn.truth;
    let p_w = p.gamma.len();
    let p_x = p.beta.len();
    let mut subjects = Vec::with_capacity(scn.n);
    let mut latent = Vec::with_capacity(scn.n);
    for i in 0..scn.n {
        let ev = draw_event(scn, rng);
        let c: f64 = rng.sample::<f64, _>(Exp1) / censor_rate;
        let event = ev.t_star <= c;
        let t_obs = ev.t_star.min(c);
        let re = ptmvn_sample(rng, &p.ptmvn(ev.t_star)?);
        let omega = re[0];
        let b = [re[1], re[2], re[3]];
        let (mut s, first_beyond) = visit_schedule(scn, t_obs, rng);
        if s.is_empty() {
            s.push((0.1 * first_beyond).min(t_obs));
        }
        let x_row = ev.cov[..p_x].to_vec();
        let y = s
            .iter()
            .map(|&sj| {
                let e: f64 = rng.sample(StandardNormal);
                piecewise_mean(&x_row, &p.beta, sj, omega, &b) + p.sigma_y * e
            })
            .collect();
        subjects.push(SubjectRecord {
            id: format!("{}", i + 1),
            x: vec![x_row; s.len()],
            w: ev.cov[..p_w].to_vec(),
            s,
            y,
            t_obs,
            event,
        });
        latent.push(SubjectLatent {
            omega,
            b,
            t_star: ev.t_star,
        });
    }
    Ok(Simulated {
        data: Dataset::new(subjects)?,
        latent,
    })
}

/// Exponential censoring rate giving censoring fraction `q`.
///
/// Draws `10^5` event times and unit exponentials once (common random
/// numbers), so the censoring fraction `mean(E_i / rate < t*_i)` is
/// monotone in the rate, then bisects on `log rate` until the fraction is
/// within 0.005 of `q`.
pub fn tune_censoring_rate<R: Rng + ?Sized>(scn: &SimScenario, q: f64, rng: &mut R) -> Result<f64> {
    const N: usize = 100_000;
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(
            "q",
            format!("censoring fraction must lie strictly between 0 and 1, got {q}"),
        ));
    }
    scn.truth.validate()?;
    let ratios: Vec<f64> = (0..N)
        .map(|_| {
            let t = draw_event(scn, rng).t_star;
            let e: f64 = Exp1.sample(rng);
            e / t
        })
        .collect();
    let frac = |rate: f64| ratios.iter().filter(|&&r| r < rate).count() as f64 / N as f64;
    let (mut lo, mut hi) = (1e-8f64.ln(), 1e8f64.ln());
    if !(frac(lo.exp()) < q && frac(hi.exp()) > q) {
        return Err(Error::Simulation(format!(
            "could not bracket censoring fraction {q}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = frac(mid.exp());
        if (f - q).abs() <= 0.005 {
            return Ok(mid.exp());
        }
        if f < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Simulation(format!(
        "bisection for censoring fraction {q} did not converge"
    )))
}

/// Fits the longitudinal-only baseline (unbounded normal random effects,
/// no survival component).
pub fn fit_longitudinal_only(
    data: &Dataset,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<PosteriorDraws> {
    fit(data, priors, ModelKind::LongitudinalOnly, cfg)
}

/// Posterior mean and 95% equal-tailed interval of one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

/// What a fitter hands back to the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub estimates: Vec<Estimate>,
    /// Largest R̂ over the estimates, when available.
    pub max_rhat: Option<f64>,
    pub divergences: usize,
}

impl FitSummary {
    pub fn from_draws(draws: &PosteriorDraws) -> Self {
        let summary = summarize_draws(draws);
        let max_rhat = summary
            .iter()
            .filter_map(|s| s.rhat)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))));
        Self {
            estimates: summary
                .into_iter()
                .map(|s| Estimate {
                    name: s.name,
                    mean: s.mean,
                    lower: s.q025,
                    upper: s.q975,
                })
                .collect(),
            max_rhat,
            divergences: draws.total_divergences(),
        }
    }
}

/// Outcome of one model fit within one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub model: String,
    pub fit: Option<FitSummary>,
    pub error: Option<String>,
    /// Set when any R̂ exceeds 1.1; the replication is kept regardless.
    pub convergence_warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub name: String,
    pub truth: f64,
    pub bias: f64,
    pub mse: f64,
    /// Percent of intervals containing the truth.
    pub coverage: f64,
    /// Replications contributing to the row.
    pub used: usize,
}

/// Bias / MSE / coverage for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub model: String,
    pub rows: Vec<MetricsRow>,
    pub replications: usize,
    pub failures: usize,
}

impl MetricsTable {
    pub fn row(&self, name: &str) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.name == name)
    }
}

/// A named fitter: dataset and seed in, posterior summary out.
pub type Fitter<'a, D> = (&'a str, &'a (dyn Fn(&D, u64) -> Result<FitSummary> + Sync));

/// Result of [`run_replications`]: one table per fitter plus every record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub tables: Vec<MetricsTable>,
    pub records: Vec<ReplicationRecord>,
}

/// Seed for replication `b` derived from a base seed (SplitMix64 step).
pub fn replication_seed(base: u64, b: usize) -> u64 {
    let mut z = base.wrapping_add((b as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generic replication harness.
///
/// For each `b < replications`, `generate` receives a ChaCha8 generator
/// seeded with `seed` on stream `b` and returns a dataset; every fitter is
/// run on it with seed [`replication_seed`]`(seed, b)`. Replications run in
/// parallel; metrics are reduced in replication order. Parameters listed in
/// `truth` but missing from a fitter's output are skipped for that fitter.
pub fn run_replications<D, G>(
    replications: usize,
    seed: u64,
    truth: &[(String, f64)],
    generate: G,
    fitters: &[Fitter<'_, D>],
) -> Result<ReplicationReport>
where
    D: Send + Sync,
    G: Fn(&mut ChaCha8Rng) -> Result<D> + Sync,
{
    if replications < 2 {
        return Err(invalid(
            "replications",
            format!("need at least 2, got {replications}"),
        ));
    }
    let per_rep: Vec<Vec<ReplicationRecord>> = (0..replications)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let data = generate(&mut rng);
            fitters
                .iter()
                .map(|(name, f)| {
                    let result = data
                        .as_ref()
                        .map_err(|e| e.to_string())
                        .and_then(|d| f(d, replication_seed(seed, b)).map_err(|e| e.to_string()));
                    match result {
                        Ok(fit) => ReplicationRecord {
                            replication: b,
                            model: name.to_string(),
                            convergence_warning: fit.max_rhat.is_some_and(|r| r > 1.1),
                            fit: Some(fit),
                            error: None,
                        },
                        Err(e) => ReplicationRecord {
                            replication: b,
                            model: name.to_string(),
                            fit: None,
                            error: Some(e),
                            convergence_warning: false,
                        },
                    }
                })
                .collect()
        })
        .collect();
    let records: Vec<ReplicationRecord> = per_rep.into_iter().flatten().collect();
    let mut tables = Vec::with_capacity(fitters.len());
    for (model, _) in fitters {
        let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.model == *model).collect();
        let failures = recs.iter().filter(|r| r.fit.is_none()).count();
        if failures as f64 > MAX_FAILURE_FRACTION * replications as f64 {
            let first = recs
                .iter()
                .find_map(|r| r.error.clone())
                .unwrap_or_default();
            return Err(Error::Simulation(format!(
                "{failures} of {replications} replications failed for model `{model}` (first error: {first})"
            )));
        }
        let mut rows = Vec::new();
        for (name, theta) in truth {
            let ests: Vec<&Estimate> = recs
                .iter()
                .filter_map(|r| r.fit.as_ref())
                .filter_map(|f| f.estimates.iter().find(|e| &e.name == name))
                .collect();
            if ests.is_empty() {
                continue;
            }
            let n = ests.len() as f64;
            let bias = ests.iter().map(|e| e.mean - theta).sum::<f64>() / n;
            let mse = ests.iter().map(|e| (e.mean - theta).powi(2)).sum::<f64>() / n;
            let covered = ests
                .iter()
                .filter(|e| e.lower <= *theta && *theta <= e.upper)
                .count();
            rows.push(MetricsRow {
                name: name.clone(),
                truth: *theta,
                bias,
                mse,
                coverage: 100.0 * covered as f64 / n,
                used: ests.len(),
            });
        }
        tables.push(MetricsTable {
            model: model.to_string(),
            rows,
            replications,
            failures,
        });
    }
    Ok(ReplicationReport { tables, records })
}

/// Generating values of the reported parameters, named as in the draws.
pub fn truth_values(p: &ModelParams) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = Vec::new();
    for (k, b) in p.beta.iter().enumerate() {
        all.push((format!("beta[{}]", k + 1), *b));
    }
    all.push(("sigma_y".into(), p.sigma_y));
    all.push(("mu_omega".into(), p.mu_omega));
    for (k, m) in p.mu_b.iter().enumerate() {
        all.push((format!("mu_b{k}"), *m));
    }
    for (name, v) in ["sigma_omega", "sigma_b0", "sigma_b1", "sigma_b2"]
        .iter()
        .zip(p.sd_r)
    {
        all.push((name.to_string(), v));
    }
    // Remaining coefficients go after the table rows.
    let mut extra: Vec<(String, f64)> = Vec::new();
    for (k, g) in p.gamma.iter().enumerate() {
        extra.push((format!("gamma[{}]", k + 1), *g));
    }
    extra.push(("eta".into(), p.eta));
    extra.push(("alpha".into(), p.alpha));
    all.extend(extra);
    all
}

/// Joint model versus longitudinal-only baseline over `scn.replications`
/// simulated datasets at the tuned censoring rate.
///
/// The censoring rate is tuned once on stream `u64::MAX` of `scn.seed`.
pub fn replication_study(
    scn: &SimScenario,
    priors: &PriorConfig,
    cfg: &SamplerConfig,
) -> Result<ReplicationReport> {
    scn.validate()?;
    cfg.validate()?;
    let mut tune_rng = ChaCha8Rng::seed_from_u64(scn.seed);
    tune_rng.set_stream(u64::MAX);
    let rate = tune_censoring_rate(scn, scn.target_censoring, &mut tune_rng)?;
    let fitter = |kind: ModelKind| {
        move |d: &Dataset, seed: u64| -> Result<FitSummary> {
            let cfg = SamplerConfig {
                seed,
                ..cfg.clone()
            };
            Ok(FitSummary::from_draws(&fit(d, priors, kind, &cfg)?))
        }
    };
    let joint = fitter(ModelKind::Joint);
    let baseline = fitter(ModelKind::LongitudinalOnly);
    run_replications(
        scn.replications,
        scn.seed,
        &truth_values(&scn.truth),
        |rng| generate_dataset(scn, rate, rng),
        &[("joint", &joint), ("longitudinal-only", &baseline)],
    )
}

/// Delimited text rendering: one row per parameter in [`TABLE_PARAMS`]
/// order, followed by any other reported parameters, with
/// `bias,mse,cover` columns per model.
pub fn format_metrics(tables: &[MetricsTable]) -> String {
    let mut out = String::from("parameter,truth");
    for t in tables {
        for col in ["bias", "mse", "cover"] {
            out.push_str(&format!(",{}_{col}", t.model));
        }
    }
    out.push('\n');
    let mut names: Vec<String> = TABLE_PARAMS.iter().map(|s| s.to_string()).collect();
    for t in tables {
        for r in &t.rows {
            if !names.contains(&r.name) {
                names.push(r.name.clone());
            }
        }
    }
    for name in names {
        let truth = tables.iter().find_map(|t| t.row(&name)).map(|r| r.truth);
        let Some(truth) = truth else { continue };
        out.push_str(&format!("{name},{truth}"));
        for t in tables {
            match t.row(&name) {
                Some(r) => out.push_str(&format!(",{:.4},{:.4},{:.1}", r.bias, r.mse, r.coverage)),
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}
