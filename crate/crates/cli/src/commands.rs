use std::path::{Path, PathBuf};

use cpjoint::fit::{fit_posterior, summarize_draws};
use cpjoint::marginal::{marginal_mean_y, population_mean_changepoint, WeibullPh};
use cpjoint::model::{Dataset, JointPosterior, ModelParams, N_RE};
use cpjoint::sampler::{quantile_sorted, PosteriorDraws};
use cpjoint::sim::{format_metrics, replication_study, simulate, tune_censoring_rate};
use cpjoint::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, ErrorKind};
use crate::io::{
    fmt_num, read_dataset, read_draws, write_dataset, write_draws, write_json, write_table,
    write_text,
};

/// Library errors about bad settings are config errors; the rest take
/// `otherwise`.
fn classify(e: Error, otherwise: ErrorKind) -> CliError {
    let kind = match e {
        Error::InvalidParameter { .. } => ErrorKind::Config,
        Error::InvalidData { .. } => ErrorKind::Data,
        _ => otherwise,
    };
    CliError::wrap(kind, e)
}

fn prepare_out(dir: &Path) -> CliResult<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| {
        CliError::config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })?;
    Ok(dir.to_path_buf())
}

#[derive(Serialize)]
struct LatentRecord<'a> {
    subject_id: &'a str,
    omega: f64,
    b: [f64; 3],
    t_star: f64,
}

#[derive(Serialize)]
struct TruthRecord<'a> {
    seed: u64,
    censoring_rate: f64,
    censored: usize,
    scenario: &'a cpjoint::sim::SimScenario,
    subjects: Vec<LatentRecord<'a>>,
}

/// Simulates one dataset and writes `longitudinal.csv`, `survival.csv` and
/// `truth.json` (scenario, seed, tuned censoring rate and latent values).
///
/// The censoring rate is tuned on stream `u64::MAX` of the seed and the
/// data are drawn from stream 0.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let scn = &cfg.scenario;
    scn.validate().map_err(|e| classify(e, ErrorKind::Config))?;
    let out = prepare_out(&cfg.output.dir)?;
    let mut tune = ChaCha8Rng::seed_from_u64(scn.seed);
    tune.set_stream(u64::MAX);
    let rate = tune_censoring_rate(scn, scn.target_censoring, &mut tune)
        .map_err(|e| classify(e, ErrorKind::Config))?;
    let sim = simulate(scn, rate, &mut ChaCha8Rng::seed_from_u64(scn.seed))
        .map_err(|e| classify(e, ErrorKind::Config))?;
    write_dataset(&out, &sim.data)?;
    let truth = TruthRecord {
        seed: scn.seed,
        censoring_rate: rate,
        censored: sim.data.n_censored(),
        scenario: scn,
        subjects: sim
            .data
            .subjects()
            .iter()
            .zip(&sim.latent)
            .map(|(s, l)| LatentRecord {
                subject_id: &s.id,
                omega: l.omega,
                b: l.b,
                t_star: l.t_star,
            })
            .collect(),
    };
    let truth_path = out.join("truth.json");
    write_json(&truth_path, &truth)?;
    Ok(vec![
        out.join("longitudinal.csv"),
        out.join("survival.csv"),
        truth_path,
    ])
}

/// The configured dataset, or a config error naming the missing path.
pub fn load_data(cfg: &RunConfig) -> CliResult<Dataset> {
    let (Some(long), Some(surv)) = (&cfg.data.longitudinal, &cfg.data.survival) else {
        return Err(CliError::config(
            "no input data: pass --data <dir> or set [data] longitudinal and survival",
        ));
    };
    read_dataset(long, surv)
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt_num)
}

/// Fits the configured model and writes `draws.csv`, `summary.csv` and
/// `diagnostics.json`.
pub fn cmd_fit(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.priors
        .validate()
        .map_err(|e| classify(e, ErrorKind::Config))?;
    cfg.sampler
        .validate()
        .map_err(|e| classify(e, ErrorKind::Config))?;
    let data = load_data(cfg)?;
    let out = prepare_out(&cfg.output.dir)?;
    let post = JointPosterior::new(data, cfg.priors.clone(), cfg.model.kind())
        .map_err(|e| classify(e, ErrorKind::Data))?;
    let draws = fit_posterior(&post, &cfg.sampler).map_err(|e| classify(e, ErrorKind::Sampler))?;

    let draws_path = out.join("draws.csv");
    write_draws(&draws_path, &draws)?;
    let header: Vec<String> = [
        "parameter",
        "mean",
        "sd",
        "q2.5",
        "q50",
        "q97.5",
        "rhat",
        "ess",
    ]
    .map(String::from)
    .to_vec();
    let rows: Vec<Vec<String>> = summarize_draws(&draws)
        .into_iter()
        .map(|s| {
            vec![
                s.name,
                fmt_num(s.mean),
                fmt_num(s.sd),
                fmt_num(s.q025),
                fmt_num(s.q50),
                fmt_num(s.q975),
                opt_num(s.rhat),
                opt_num(s.ess),
            ]
        })
        .collect();
    let summary_path = out.join("summary.csv");
    write_table(&summary_path, &header, &rows)?;
    let diag_path = out.join("diagnostics.json");
    write_json(&diag_path, &draws.diagnostics)?;
    Ok(vec![draws_path, summary_path, diag_path])
}

/// Runs the replication study and writes `metrics.csv` plus the
/// per-replication records in `replications.json`.
pub fn cmd_replicate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    cfg.scenario
        .validate()
        .map_err(|e| classify(e, ErrorKind::Config))?;
    cfg.priors
        .validate()
        .map_err(|e| classify(e, ErrorKind::Config))?;
    cfg.sampler
        .validate()
        .map_err(|e| classify(e, ErrorKind::Config))?;
    let out = prepare_out(&cfg.output.dir)?;
    let report = replication_study(&cfg.scenario, &cfg.priors, &cfg.sampler)
        .map_err(|e| classify(e, ErrorKind::Sampler))?;
    let metrics_path = out.join("metrics.csv");
    write_text(&metrics_path, &format_metrics(&report.tables))?;
    let records_path = out.join("replications.json");
    write_json(&records_path, &report)?;
    Ok(vec![metrics_path, records_path])
}

/// Rebuilds model parameters from one draws row, by column name.
pub fn params_from_row(names: &[String], row: &[f64]) -> CliResult<ModelParams> {
    let get = |name: &str| -> CliResult<f64> {
        names
            .iter()
            .position(|n| n == name)
            .map(|k| row[k])
            .ok_or_else(|| {
                CliError::data(format!(
                    "draws have no column `{name}`; summarize needs joint-model draws"
                ))
            })
    };
    let indexed = |prefix: &str| -> Vec<f64> {
        (1..)
            .map_while(|k| {
                names
                    .iter()
                    .position(|n| *n == format!("{prefix}[{k}]"))
                    .map(|i| row[i])
            })
            .collect()
    };
    let re = ["omega", "b0", "b1", "b2"];
    let mut corr = [[0.0; N_RE]; N_RE];
    for i in 0..N_RE {
        corr[i][i] = 1.0;
        for j in 0..i {
            let c = get(&format!("corr_{}_{}", re[j], re[i]))?;
            corr[i][j] = c;
            corr[j][i] = c;
        }
    }
    Ok(ModelParams {
        gamma: indexed("gamma"),
        eta: get("eta")?,
        alpha: get("alpha")?,
        beta: indexed("beta"),
        sigma_y: get("sigma_y")?,
        mu_omega: get("mu_omega")?,
        mu_b: [get("mu_b0")?, get("mu_b1")?, get("mu_b2")?],
        sd_r: [
            get("sigma_omega")?,
            get("sigma_b0")?,
            get("sigma_b1")?,
            get("sigma_b2")?,
        ],
        corr,
    })
}

/// Mean, SD and 2.5 / 50 / 97.5% quantiles.
fn describe(values: &[f64]) -> [f64; 5] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        mean,
        sd,
        quantile_sorted(&sorted, 0.025),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.975),
    ]
}

/// Covariate distribution for the population mean change point: the
/// `[summarize] covariates` list, else the empirical distribution of the
/// configured survival file.
fn covariate_mixture(cfg: &RunConfig, p_w: usize) -> CliResult<Vec<(Vec<f64>, f64)>> {
    if !cfg.summarize.covariates.is_empty() {
        return Ok(cfg
            .summarize
            .covariates
            .iter()
            .map(|c| (c.w.clone(), c.weight))
            .collect());
    }
    if p_w == 0 {
        return Ok(vec![(Vec::new(), 1.0)]);
    }
    let data = load_data(cfg).map_err(|e| match e.kind {
        ErrorKind::Config => CliError::config(
            "no covariate distribution: set [summarize] covariates or pass --data <dir>",
        ),
        _ => e,
    })?;
    let mut groups: Vec<(Vec<f64>, f64)> = Vec::new();
    for s in data.subjects() {
        match groups.iter_mut().find(|(w, _)| *w == s.w) {
            Some(g) => g.1 += 1.0,
            None => groups.push((s.w.clone(), 1.0)),
        }
    }
    Ok(groups)
}

/// Posterior of the population mean change point and of the marginal mean
/// curve at each configured event time. Writes `changepoint.csv` and one
/// `mean_curve_<k>.csv` per event time.
pub fn cmd_summarize(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let s_cfg = &cfg.summarize;
    if s_cfg.t_star.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(CliError::config(
            "[summarize] t_star values must be positive",
        ));
    }
    if s_cfg.tol.is_nan() || s_cfg.tol <= 0.0 {
        return Err(CliError::config("[summarize] tol must be positive"));
    }
    let draws_path = cfg
        .data
        .draws
        .clone()
        .unwrap_or_else(|| cfg.output.dir.join("draws.csv"));
    let draws = read_draws(&draws_path)?;
    let params = all_params(&draws)?;
    let p_w = params[0].gamma.len();
    let p_x = params[0].beta.len();
    let mixture = covariate_mixture(cfg, p_w)?;
    if let Some((w, _)) = mixture.iter().find(|(w, _)| w.len() != p_w) {
        return Err(CliError::config(format!(
            "covariate vector {w:?} has length {}, the draws have {p_w} survival coefficients",
            w.len()
        )));
    }
    let x_row = s_cfg.x.clone().unwrap_or_else(|| vec![0.0; p_x]);
    if x_row.len() != p_x {
        return Err(CliError::config(format!(
            "[summarize] x has length {}, the draws have {p_x} fixed effects",
            x_row.len()
        )));
    }
    let out = prepare_out(&cfg.output.dir)?;
    let stats_header: Vec<String> = ["mean", "sd", "q2.5", "q50", "q97.5"]
        .map(String::from)
        .to_vec();

    let m_omega = params
        .iter()
        .map(|p| {
            population_mean_changepoint(
                p.mu_omega,
                p.sd_r[0],
                &WeibullPh::from_params(p),
                &mixture,
                s_cfg.tol,
            )
            .map_err(|e| classify(e, ErrorKind::Data))
        })
        .collect::<CliResult<Vec<f64>>>()?;
    let mut header = vec!["quantity".to_string()];
    header.extend(stats_header.iter().cloned());
    let mut row = vec!["m_omega".to_string()];
    row.extend(describe(&m_omega).map(fmt_num));
    let cp_path = out.join("changepoint.csv");
    write_table(&cp_path, &header, &[row])?;
    let mut written = vec![cp_path];

    for (k, &t) in s_cfg.t_star.iter().enumerate() {
        let grid: Vec<f64> = s_cfg
            .visit_times
            .clone()
            .unwrap_or_else(|| (0..=20).map(|j| t * j as f64 / 20.0).collect());
        let x: Vec<Vec<f64>> = grid.iter().map(|_| x_row.clone()).collect();
        let curves = params
            .iter()
            .map(|p| {
                let law = p.ptmvn(t).map_err(|e| classify(e, ErrorKind::Data))?;
                marginal_mean_y(&x, &grid, &p.beta, &law).map_err(|e| classify(e, ErrorKind::Data))
            })
            .collect::<CliResult<Vec<Vec<f64>>>>()?;
        let mut header = vec!["t_star".to_string(), "visit_time".to_string()];
        header.extend(stats_header.iter().cloned());
        let rows: Vec<Vec<String>> = grid
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                let vals: Vec<f64> = curves.iter().map(|c| c[j]).collect();
                let mut row = vec![fmt_num(t), fmt_num(s)];
                row.extend(describe(&vals).map(fmt_num));
                row
            })
            .collect();
        let path = out.join(format!("mean_curve_{}.csv", k + 1));
        write_table(&path, &header, &rows)?;
        written.push(path);
    }
    Ok(written)
}

fn all_params(draws: &PosteriorDraws) -> CliResult<Vec<ModelParams>> {
    let mut params = Vec::with_capacity(draws.n_chains() * draws.n_samples());
    for c in 0..draws.n_chains() {
        for i in 0..draws.n_samples() {
            params.push(params_from_row(draws.names(), draws.row(c, i))?);
        }
    }
    Ok(params)
}
