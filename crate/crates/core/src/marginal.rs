//! Marginal moments of the longitudinal outcome given the event time, and
//! the population mean change point.
//!
//! With `Δ_j = s_j − ω`, the random-effects design row is
//! `z_j = (1, Δ_j 1{Δ_j ≤ 0}, Δ_j 1{Δ_j ≥ 0})`. Given `t*`, `ω` follows
//! `TN(μ_ω, σ_ω², 0, t*)` and `b | ω ~ N(μ_{b|ω}, Σ_{b|ω})` with
//! `μ_{b|ω} = c_0 + c_1 ω`, `c_0 = μ_b − (μ_ω/σ_ω²) σ_bω`, `c_1 = σ_bω/σ_ω²`.
//! Hence `E[y] = Xβ + E[Z] c_0 + E[ωZ] c_1`, where the entries of `E[Z]` and
//! `E[ωZ]` are partial moments of the truncated normal.
//!
//! For the covariance, the law of total variance gives
//!
//! ```text
//! Var(y) = σ_y² I + E[Z Σ_{b|ω} Z′] + Var(Z μ_{b|ω})
//! ```
//!
//! [`marginal_cov_y_mc`] estimates both expectations over `ω` by Monte Carlo
//! and reports the conditional part (`σ_y² I + E[Z Σ_{b|ω} Z′]`) and the
//! total separately.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::model::ModelParams;
use crate::ptmvn::{cond_b_given_omega, partial_moment, PtmvnParams};
use crate::quad::integrate;
use crate::truncnorm::{tn_moment, tn_sample, TruncNormParams};

/// `(E[Z], E[ωZ])`, each `n × 3`, for visit times `s` and `ω ~ tn`.
pub fn expected_z(s: &[f64], tn: &TruncNormParams) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = s.len();
    let mean_omega = tn_moment(1, tn);
    let mut ez = DMatrix::zeros(n, 3);
    let mut ewz = DMatrix::zeros(n, 3);
    let inf = f64::INFINITY;
    for (j, &sj) in s.iter().enumerate() {
        ez[(j, 0)] = 1.0;
        ez[(j, 1)] = partial_moment(0, 1, sj, -inf, 0.0, tn);
        ez[(j, 2)] = partial_moment(0, 1, sj, 0.0, inf, tn);
        ewz[(j, 0)] = mean_omega;
        ewz[(j, 1)] = partial_moment(1, 1, sj, -inf, 0.0, tn);
        ewz[(j, 2)] = partial_moment(1, 1, sj, 0.0, inf, tn);
    }
    (ez, ewz)
}

fn check_dim(p: &PtmvnParams) -> Result<()> {
    if p.dim() != 4 {
        return Err(invalid(
            "ptmvn",
            format!("expected (ω, b0, b1, b2), got dimension {}", p.dim()),
        ));
    }
    Ok(())
}

/// `(c_0, c_1)` with `μ_{b|ω} = c_0 + c_1 ω`.
fn conditional_mean_coefficients(p: &PtmvnParams) -> (DVector<f64>, DVector<f64>) {
    let sigma = p.sigma();
    let var_w = sigma[(0, 0)];
    let s_bw = DVector::from_fn(3, |k, _| sigma[(k + 1, 0)]);
    let mu_b = DVector::from_fn(3, |k, _| p.mu()[k + 1]);
    let c1 = &s_bw / var_w;
    let c0 = mu_b - &c1 * p.mu()[0];
    (c0, c1)
}

/// Marginal mean of `y` at visit times `s` given the event time encoded in
/// the upper bound of `p` (lower bound 0).
///
/// `x` holds one fixed-effect covariate row per visit.
pub fn marginal_mean_y(
    x: &[Vec<f64>],
    s: &[f64],
    beta: &[f64],
    p: &PtmvnParams,
) -> Result<Vec<f64>> {
    check_dim(p)?;
    if x.len() != s.len() {
        return Err(invalid("x", "one covariate row per visit required"));
    }
    let tn = p.omega_marginal();
    let (ez, ewz) = expected_z(s, &tn);
    let (c0, c1) = conditional_mean_coefficients(p);
    let re = &ez * c0 + &ewz * c1;
    Ok(x.iter()
        .enumerate()
        .map(|(j, row)| row.iter().zip(beta).map(|(a, c)| a * c).sum::<f64>() + re[j])
        .collect())
}

/// Monte Carlo marginal covariance of `y`.
#[derive(Debug, Clone)]
pub struct MarginalCov {
    /// `σ_y² I + E[Z Σ_{b|ω} Z′]`.
    pub conditional: DMatrix<f64>,
    /// `conditional + Var(Z μ_{b|ω})`, the full covariance of `y`.
    pub total: DMatrix<f64>,
}

fn design_row(s: f64, omega: f64) -> [f64; 3] {
    let d = s - omega;
    [
        1.0,
        if d <= 0.0 { d } else { 0.0 },
        if d >= 0.0 { d } else { 0.0 },
    ]
}

/// Marginal covariance of `y` at visit times `s` using `draws` samples of
/// `ω ~ TN(μ_ω, σ_ω², l, u)`.
pub fn marginal_cov_y_mc<R: Rng + ?Sized>(
    s: &[f64],
    p: &PtmvnParams,
    sigma_y: f64,
    draws: usize,
    rng: &mut R,
) -> Result<MarginalCov> {
    check_dim(p)?;
    if draws < 1000 {
        return Err(invalid("draws", format!("need at least 1000, got {draws}")));
    }
    let n = s.len();
    let tn = p.omega_marginal();
    // Σ_{b|ω} does not depend on ω; evaluate it at any interior point.
    let cov_b = cond_b_given_omega(tn_moment(1, &tn), p)?.cov;
    let (c0, c1) = conditional_mean_coefficients(p);
    let mut e_zsz = DMatrix::<f64>::zeros(n, n);
    let mut mean_m = DVector::<f64>::zeros(n);
    let mut m2 = DMatrix::<f64>::zeros(n, n);
    let mut z = DMatrix::<f64>::zeros(n, 3);
    for k in 0..draws {
        let omega = tn_sample(rng, &tn);
        for (j, &sj) in s.iter().enumerate() {
            let row = design_row(sj, omega);
            for c in 0..3 {
                z[(j, c)] = row[c];
            }
        }
        e_zsz += &z * &cov_b * z.transpose();
        let m = &z * (&c0 + &c1 * omega);
        let delta = &m - &mean_m;
        mean_m += &delta / (k + 1) as f64;
        let delta2 = &m - &mean_m;
        m2 += &delta * delta2.transpose();
    }
    let mut conditional = e_zsz / draws as f64;
    for j in 0..n {
        conditional[(j, j)] += sigma_y * sigma_y;
    }
    let total = &conditional + m2 / (draws - 1) as f64;
    Ok(MarginalCov { conditional, total })
}

/// `E[ω | t* = t]` for `ω ~ TN(μ_ω, σ_ω², 0, t)`.
pub fn conditional_mean_changepoint(t: f64, mu_omega: f64, sigma_omega: f64) -> Result<f64> {
    let tn = TruncNormParams::new(mu_omega, sigma_omega, 0.0, t)?;
    Ok(tn_moment(1, &tn))
}

/// Weibull proportional-hazards event-time law.
#[derive(Debug, Clone, PartialEq)]
pub struct WeibullPh {
    pub gamma: Vec<f64>,
    pub eta: f64,
    pub alpha: f64,
}

impl WeibullPh {
    pub fn from_params(p: &ModelParams) -> Self {
        Self {
            gamma: p.gamma.clone(),
            eta: p.eta,
            alpha: p.alpha,
        }
    }

    /// Characteristic time `(η e^{w′γ})^{−1/α}`.
    fn scale(&self, w: &[f64]) -> f64 {
        let lp: f64 = w.iter().zip(&self.gamma).map(|(a, b)| a * b).sum();
        (self.eta * lp.exp()).powf(-1.0 / self.alpha)
    }
}

/// Population mean change point
/// `m_ω = Σ_w π_w ∫ E[ω | t* = t] f_T(t | w) dt`.
///
/// `covariates` lists survival covariate vectors with nonnegative weights
/// (normalized internally); a single entry gives the fixed-covariate value.
/// Each integral is mapped to `(0, 1)` through the Weibull quantile
/// `t = c (−log(1 − v))^{1/α}`, with `c` the characteristic time, so that
/// `m_ω = ∫_0^1 E[ω | t* = t(v)] dv` has a bounded integrand however
/// concentrated `f_T` is. Evaluated by adaptive quadrature to absolute
/// tolerance `tol`.
pub fn population_mean_changepoint(
    mu_omega: f64,
    sigma_omega: f64,
    survival: &WeibullPh,
    covariates: &[(Vec<f64>, f64)],
    tol: f64,
) -> Result<f64> {
    if !(sigma_omega > 0.0) || !mu_omega.is_finite() {
        return Err(invalid("sigma_omega", "need σ_ω > 0 and finite μ_ω"));
    }
    if !(survival.eta > 0.0 && survival.alpha > 0.0) {
        return Err(invalid("survival", "η and α must be positive"));
    }
    let total_w: f64 = covariates.iter().map(|(_, w)| *w).sum();
    if covariates.is_empty() || !(total_w > 0.0) || covariates.iter().any(|(_, w)| !(*w >= 0.0)) {
        return Err(invalid(
            "covariates",
            "need at least one nonnegative weight with a positive sum",
        ));
    }
    let mut m = 0.0;
    for (w, weight) in covariates {
        if *weight == 0.0 {
            continue;
        }
        let c = survival.scale(w);
        let integrand = |v: f64| {
            if !(v > 0.0 && v < 1.0) {
                return 0.0;
            }
            let t = c * (-(-v).ln_1p()).powf(1.0 / survival.alpha);
            if !(t > 0.0 && t.is_finite()) {
                return 0.0;
            }
            // For tiny t the truncation region is (0, t) and ω is nearly uniform.
            conditional_mean_changepoint(t, mu_omega, sigma_omega).unwrap_or(0.5 * t)
        };
        let value = integrate(integrand, 0.0, 1.0, tol)?;
        if !value.is_finite() {
            return Err(Error::Quadrature(
                "non-finite population mean change point".into(),
            ));
        }
        m += weight / total_w * value;
    }
    Ok(m)
}
