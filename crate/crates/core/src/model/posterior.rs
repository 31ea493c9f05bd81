//! Joint log posterior on a fully unconstrained coordinate vector.
//!
//! # Layout
//!
//! ```text
//! [γ (p_w)] [log η] [log α] [β (p_x)] [log σ_y] [μ_ω] [μ_b0 μ_b1 μ_b2]
//! [log σ_ω, log σ_b0, log σ_b1, log σ_b2] [correlation (6)]
//! per subject: [z_ω, z_b0, z_b1, z_b2]
//! per censored subject (in subject order): [z_t]
//! ```
//!
//! The survival block `(γ, η, α)` and the `z_t` block exist only for
//! [`ModelKind::Joint`]. Event subjects own no `z_t` coordinate.
//!
//! # Decoding
//!
//! Positive parameters use `exp`. The correlation matrix is built from
//! canonical partial correlations (see `CorrTransform`). For the joint model
//! `t* = t_obs + exp(z_t)` for censored subjects (`t* = t_obs` otherwise),
//! `ω = t*·logistic(z_ω)`, and with `C` the Cholesky factor of the
//! correlation matrix, `u = (ω − μ_ω)/σ_ω` and `ẑ = (u, z_b)`,
//!
//! ```text
//! b_k = μ_bk + σ_b{k} Σ_{m ≤ k+1} C[k+1][m] ẑ_m
//! ```
//!
//! which is `b = μ_b + l_21 (ω − μ_ω)/l_11 + L_22 z_b` for the lower Cholesky
//! factor `L = diag(σ) C` of `Σ_r`. The longitudinal-only model draws
//! `ω = μ_ω + σ_ω z_ω` without truncation.
//!
//! # Reduced random-effects density
//!
//! The PTMVN density of `(ω, b)` factors as
//! `N(ω | μ_ω, σ_ω²) · N(b | μ_{b|ω}, Σ_{b|ω}) / Z` with
//! `Z = Φ(υ) − Φ(λ)`, `υ = (t* − μ_ω)/σ_ω`, `λ = −μ_ω/σ_ω`. The conditional
//! mean of `b` is exactly the first two terms of the decode above and
//! `Σ_{b|ω} = L_22 L_22′`, so `N(b | μ_{b|ω}, Σ_{b|ω}) = N_3(z_b | 0, I) / |L_22|`.
//! The Jacobian of `z_b ↦ b` is `|L_22|`, which cancels. Per subject the
//! random-effects contribution is therefore
//!
//! ```text
//! log N(u) − log σ_ω − log Z + Σ_k log N(z_bk)
//! ```
//!
//! plus the Jacobians of `z_ω ↦ ω` (`log t* + log s + log(1−s)`, `s` the
//! logistic) and of `z_t ↦ t*` (`z_t`). In the longitudinal-only model the
//! `ω` Jacobian `σ_ω` also cancels, leaving `log N(z_ω) + Σ log N(z_bk)`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::truncnorm::{log_normal_mass, std_normal_logpdf, LN_SQRT_2PI};

use super::data::{Dataset, SubjectRecord};
use super::params::{unconstrained_from_corr, CorrTransform, ModelParams, N_CORR, N_RE};
use super::priors::PriorConfig;

/// Which model the posterior describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Survival submodel plus the change point bounded by the event time.
    Joint,
    /// Unbounded normal random effects, no survival component.
    LongitudinalOnly,
}

/// Offsets of each block in the unconstrained vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub kind: ModelKind,
    pub p_w: usize,
    pub p_x: usize,
    pub n_subjects: usize,
    pub gamma: usize,
    pub log_eta: usize,
    pub log_alpha: usize,
    pub beta: usize,
    pub log_sigma_y: usize,
    pub mu_omega: usize,
    pub mu_b: usize,
    pub log_sd: usize,
    pub corr: usize,
    pub latent: usize,
    pub z_t: usize,
    /// For each subject, its position in the `z_t` block when censored.
    pub censored_slot: Vec<Option<usize>>,
    dim: usize,
}

impl Layout {
    pub fn new(kind: ModelKind, data: &Dataset) -> Self {
        let p_w = data.p_w();
        let p_x = data.p_x();
        let n = data.len();
        let survival = kind == ModelKind::Joint;
        let gamma = 0;
        let (log_eta, log_alpha, beta) = if survival {
            (p_w, p_w + 1, p_w + 2)
        } else {
            (usize::MAX, usize::MAX, 0)
        };
        let log_sigma_y = beta + p_x;
        let mu_omega = log_sigma_y + 1;
        let mu_b = mu_omega + 1;
        let log_sd = mu_b + 3;
        let corr = log_sd + N_RE;
        let latent = corr + N_CORR;
        let z_t = latent + N_RE * n;
        let mut censored_slot = vec![None; n];
        let mut n_cens = 0;
        if survival {
            for (i, s) in data.subjects().iter().enumerate() {
                if !s.event {
                    censored_slot[i] = Some(n_cens);
                    n_cens += 1;
                }
            }
        }
        Self {
            kind,
            p_w: if survival { p_w } else { 0 },
            p_x,
            n_subjects: n,
            gamma,
            log_eta,
            log_alpha,
            beta,
            log_sigma_y,
            mu_omega,
            mu_b,
            log_sd,
            corr,
            latent,
            z_t,
            censored_slot,
            dim: z_t + n_cens,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of global (non-latent) coordinates.
    pub fn n_global(&self) -> usize {
        self.latent
    }

    pub fn has_survival(&self) -> bool {
        self.kind == ModelKind::Joint
    }

    /// Index of `z_ω` for subject `i`; `z_b` follows it.
    pub fn subject_offset(&self, i: usize) -> usize {
        self.latent + N_RE * i
    }

    pub fn z_t_index(&self, i: usize) -> Option<usize> {
        self.censored_slot[i].map(|k| self.z_t + k)
    }
}

/// Decoded per-subject latent quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectLatent {
    pub omega: f64,
    pub b: [f64; 3],
    /// Event time: observed for events, imputed for censored subjects.
    pub t_star: f64,
}

/// Result of mapping an unconstrained vector to the model's natural scale.
///
/// For the longitudinal-only model the survival block is absent: `gamma` is
/// empty and `eta`, `alpha` are NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub params: ModelParams,
    pub subjects: Vec<SubjectLatent>,
    /// Log absolute Jacobian of the whole map, including the correlation block.
    pub log_jacobian: f64,
}

/// Additive components of the log posterior.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogPostBreakdown {
    pub survival: f64,
    pub random_effects: f64,
    pub longitudinal: f64,
    pub prior: f64,
    pub jacobian: f64,
}

impl LogPostBreakdown {
    pub fn total(&self) -> f64 {
        self.survival + self.random_effects + self.longitudinal + self.prior + self.jacobian
    }

    fn check(self) -> Result<f64> {
        let t = self.total();
        if t.is_finite() {
            Ok(t)
        } else {
            Err(Error::NonFiniteLogPosterior {
                survival: self.survival,
                random_effects: self.random_effects,
                longitudinal: self.longitudinal,
                prior: self.prior,
                jacobian: self.jacobian,
            })
        }
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Global parameters decoded from the unconstrained vector, with the
/// correlation intermediates kept for the gradient.
struct Globals {
    params: ModelParams,
    corr: CorrTransform,
}

/// Gradient accumulator for the global block plus the correlation factor.
struct GlobalGrad {
    g: Vec<f64>,
    chol: [[f64; N_RE]; N_RE],
}

/// Posterior of the joint (or longitudinal-only) model for a fixed dataset.
#[derive(Debug, Clone)]
pub struct JointPosterior {
    data: Dataset,
    priors: PriorConfig,
    layout: Layout,
    latent_output: bool,
}

impl JointPosterior {
    pub fn new(data: Dataset, priors: PriorConfig, kind: ModelKind) -> Result<Self> {
        priors.validate()?;
        let layout = Layout::new(kind, &data);
        Ok(Self {
            data,
            priors,
            layout,
            latent_output: false,
        })
    }

    /// Include per-subject `ω`, `b` and `t*` in [`Self::param_names`] / [`Self::constrain`].
    pub fn with_latent_output(mut self, on: bool) -> Self {
        self.latent_output = on;
        self
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn priors(&self) -> &PriorConfig {
        &self.priors
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn kind(&self) -> ModelKind {
        self.layout.kind
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn check_len(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(crate::error::invalid(
                "theta",
                format!("expected length {}, got {}", self.dim(), theta.len()),
            ));
        }
        Ok(())
    }

    fn decode_globals(&self, theta: &[f64]) -> Result<Globals> {
        let l = &self.layout;
        let fail = |index: usize, what: &str| Error::Decode {
            index,
            what: what.to_string(),
        };
        let exp_at = |index: usize, what: &str| -> Result<f64> {
            let v = theta[index].exp();
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(fail(index, what))
            }
        };
        for (k, v) in theta[..l.n_global()].iter().enumerate() {
            if !v.is_finite() {
                return Err(fail(k, "non-finite coordinate"));
            }
        }
        let (gamma, eta, alpha) = if l.has_survival() {
            (
                theta[l.gamma..l.gamma + l.p_w].to_vec(),
                exp_at(l.log_eta, "eta")?,
                exp_at(l.log_alpha, "alpha")?,
            )
        } else {
            (Vec::new(), f64::NAN, f64::NAN)
        };
        let mut sd_r = [0.0; N_RE];
        for (k, sd) in sd_r.iter_mut().enumerate() {
            *sd = exp_at(l.log_sd + k, "random-effect sd")?;
        }
        let corr_t = CorrTransform::forward(&theta[l.corr..l.corr + N_CORR]);
        let c = &corr_t.chol;
        let mut corr = [[0.0; N_RE]; N_RE];
        for i in 0..N_RE {
            for j in 0..N_RE {
                corr[i][j] = if i == j {
                    1.0
                } else {
                    (0..=i.min(j)).map(|k| c[i][k] * c[j][k]).sum()
                };
            }
        }
        if (1..N_RE).any(|i| !(c[i][i] > 0.0)) {
            return Err(fail(
                l.corr,
                "correlation factor lost positive definiteness",
            ));
        }
        let params = ModelParams {
            gamma,
            eta,
            alpha,
            beta: theta[l.beta..l.beta + l.p_x].to_vec(),
            sigma_y: exp_at(l.log_sigma_y, "sigma_y")?,
            mu_omega: theta[l.mu_omega],
            mu_b: [theta[l.mu_b], theta[l.mu_b + 1], theta[l.mu_b + 2]],
            sd_r,
            corr,
        };
        Ok(Globals {
            params,
            corr: corr_t,
        })
    }

    /// `b` from the standardized vector `ẑ = (u, z_b)`.
    fn b_from(g: &Globals, zhat: &[f64; N_RE]) -> [f64; 3] {
        let p = &g.params;
        let c = &g.corr.chol;
        let mut b = [0.0; 3];
        for k in 0..3 {
            let row = k + 1;
            let lin: f64 = (0..=row).map(|m| c[row][m] * zhat[m]).sum();
            b[k] = p.mu_b[k] + p.sd_r[row] * lin;
        }
        b
    }

    fn t_star(&self, theta: &[f64], i: usize) -> f64 {
        let s = &self.data[i];
        match self.layout.z_t_index(i) {
            Some(k) => s.t_obs + theta[k].exp(),
            None => s.t_obs,
        }
    }

    fn decode_subject(&self, theta: &[f64], g: &Globals, i: usize) -> Result<(SubjectLatent, f64)> {
        let off = self.layout.subject_offset(i);
        let p = &g.params;
        let z = &theta[off..off + N_RE];
        let (t_star, omega, u, log_jac) = match self.layout.kind {
            ModelKind::Joint => {
                let t_star = self.t_star(theta, i);
                let zt_jac = self.layout.z_t_index(i).map_or(0.0, |k| theta[k]);
                let omega = t_star * logistic(z[0]);
                let jac = t_star.ln() - softplus(-z[0]) - softplus(z[0]) + zt_jac;
                (t_star, omega, (omega - p.mu_omega) / p.sd_r[0], jac)
            }
            ModelKind::LongitudinalOnly => {
                let t_star = self.data[i].t_obs;
                (t_star, p.mu_omega + p.sd_r[0] * z[0], z[0], p.sd_r[0].ln())
            }
        };
        let b = Self::b_from(g, &[u, z[1], z[2], z[3]]);
        let l22: f64 = (1..N_RE)
            .map(|k| (p.sd_r[k] * g.corr.chol[k][k]).ln())
            .sum();
        let latent = SubjectLatent { omega, b, t_star };
        let ok = omega.is_finite()
            && t_star.is_finite()
            && b.iter().all(|v| v.is_finite())
            && (self.layout.kind == ModelKind::LongitudinalOnly || (omega > 0.0 && omega < t_star));
        if !ok {
            let index = match self.layout.z_t_index(i) {
                Some(k) if !t_star.is_finite() => k,
                _ => off,
            };
            return Err(Error::Decode {
                index,
                what: format!("latent state of subject {}", self.data[i].id),
            });
        }
        Ok((latent, log_jac + l22))
    }

    fn global_log_jacobian(&self, theta: &[f64], g: &Globals) -> f64 {
        let l = &self.layout;
        let mut j = theta[l.log_sigma_y] + theta[l.log_sd..l.log_sd + N_RE].iter().sum::<f64>();
        if l.has_survival() {
            j += theta[l.log_eta] + theta[l.log_alpha];
        }
        j + g.corr.log_density(1.0)
    }

    /// Maps an unconstrained vector to parameters and latent states.
    pub fn decode(&self, theta: &[f64]) -> Result<Decoded> {
        self.check_len(theta)?;
        let g = self.decode_globals(theta)?;
        let mut log_jacobian = self.global_log_jacobian(theta, &g);
        let mut subjects = Vec::with_capacity(self.data.len());
        for i in 0..self.data.len() {
            let (s, j) = self.decode_subject(theta, &g, i)?;
            log_jacobian += j;
            subjects.push(s);
        }
        Ok(Decoded {
            params: g.params,
            subjects,
            log_jacobian,
        })
    }

    /// Exact inverse of [`Self::decode`].
    pub fn encode(&self, params: &ModelParams, latents: &[SubjectLatent]) -> Result<Vec<f64>> {
        let l = &self.layout;
        if l.has_survival() {
            params.validate()?;
        } else {
            params.validate_longitudinal()?;
        }
        if latents.len() != self.data.len() {
            return Err(crate::error::invalid(
                "latents",
                "one entry per subject required",
            ));
        }
        if params.beta.len() != l.p_x || (l.has_survival() && params.gamma.len() != l.p_w) {
            return Err(crate::error::invalid(
                "params",
                "coefficient dimensions do not match the data",
            ));
        }
        let mut theta = vec![0.0; self.dim()];
        if l.has_survival() {
            theta[l.gamma..l.gamma + l.p_w].copy_from_slice(&params.gamma);
            theta[l.log_eta] = params.eta.ln();
            theta[l.log_alpha] = params.alpha.ln();
        }
        theta[l.beta..l.beta + l.p_x].copy_from_slice(&params.beta);
        theta[l.log_sigma_y] = params.sigma_y.ln();
        theta[l.mu_omega] = params.mu_omega;
        theta[l.mu_b..l.mu_b + 3].copy_from_slice(&params.mu_b);
        for k in 0..N_RE {
            theta[l.log_sd + k] = params.sd_r[k].ln();
        }
        let y = unconstrained_from_corr(&params.corr)?;
        theta[l.corr..l.corr + N_CORR].copy_from_slice(&y);
        let c = CorrTransform::forward(&y).chol;
        for (i, lat) in latents.iter().enumerate() {
            let subj = &self.data[i];
            let off = l.subject_offset(i);
            let u = (lat.omega - params.mu_omega) / params.sd_r[0];
            match l.kind {
                ModelKind::Joint => {
                    match l.z_t_index(i) {
                        Some(k) => {
                            if !(lat.t_star > subj.t_obs) {
                                return Err(Error::OutsideSupport(format!(
                                    "censored subject {} needs t* > {}, got {}",
                                    subj.id, subj.t_obs, lat.t_star
                                )));
                            }
                            theta[k] = (lat.t_star - subj.t_obs).ln();
                        }
                        None => {
                            if lat.t_star != subj.t_obs {
                                return Err(Error::OutsideSupport(format!(
                                    "event subject {} has t* fixed at {}",
                                    subj.id, subj.t_obs
                                )));
                            }
                        }
                    }
                    if !(lat.omega > 0.0 && lat.omega < lat.t_star) {
                        return Err(Error::OutsideSupport(format!(
                            "change point {} of subject {} outside (0, {})",
                            lat.omega, subj.id, lat.t_star
                        )));
                    }
                    let r = lat.omega / lat.t_star;
                    theta[off] = r.ln() - (-r).ln_1p();
                }
                ModelKind::LongitudinalOnly => theta[off] = u,
            }
            let mut zhat = [u, 0.0, 0.0, 0.0];
            for k in 0..3 {
                let row = k + 1;
                let partial: f64 = (0..row).map(|m| c[row][m] * zhat[m]).sum();
                zhat[row] =
                    ((lat.b[k] - params.mu_b[k]) / params.sd_r[row] - partial) / c[row][row];
                theta[off + row] = zhat[row];
            }
        }
        Ok(theta)
    }

    fn prior_terms(&self, theta: &[f64], g: &Globals, grad: Option<&mut GlobalGrad>) -> (f64, f64) {
        let l = &self.layout;
        let pr = &self.priors;
        let p = &g.params;
        let mut prior = 0.0;
        let mut gbuf = grad;
        let mut add = |idx: usize, d: f64| {
            if let Some(gg) = gbuf.as_deref_mut() {
                gg.g[idx] += d;
            }
        };
        // Half-normal on a log-scale coordinate: value, and derivative incl. the exp Jacobian.
        let half = |v: f64, s: f64| (-0.5 * (v / s).powi(2), -(v / s).powi(2) + 1.0);
        if l.has_survival() {
            for k in 0..l.p_w {
                let x = theta[l.gamma + k];
                prior += -0.5 * (x / pr.gamma_sd).powi(2);
                add(l.gamma + k, -x / (pr.gamma_sd * pr.gamma_sd));
            }
            let (v, d) = half(p.eta, pr.eta_scale);
            prior += v;
            add(l.log_eta, d);
            let (v, d) = half(p.alpha, pr.alpha_scale);
            prior += v;
            add(l.log_alpha, d);
        }
        for k in 0..l.p_x {
            let x = theta[l.beta + k];
            prior += -0.5 * (x / pr.beta_sd).powi(2);
            add(l.beta + k, -x / (pr.beta_sd * pr.beta_sd));
        }
        let (v, d) = half(p.sigma_y, pr.sigma_y_scale);
        prior += v;
        add(l.log_sigma_y, d);
        let (v, d) = pr.mu_omega.logpdf_and_deriv(p.mu_omega);
        prior += v;
        add(l.mu_omega, d);
        for k in 0..3 {
            let (v, d) = pr.mu_b[k].logpdf_and_deriv(p.mu_b[k]);
            prior += v;
            add(l.mu_b + k, d);
        }
        for k in 0..N_RE {
            let (v, d) = half(p.sd_r[k], pr.sd_r_scale[k]);
            prior += v;
            add(l.log_sd + k, d);
        }
        // The correlation block contributes LKJ + Jacobian jointly.
        let corr_total = g.corr.log_density(pr.lkj_eta);
        let corr_jac = g.corr.log_density(1.0);
        prior += corr_total - corr_jac;
        let mut jac =
            corr_jac + theta[l.log_sigma_y] + theta[l.log_sd..l.log_sd + N_RE].iter().sum::<f64>();
        if l.has_survival() {
            jac += theta[l.log_eta] + theta[l.log_alpha];
        }
        (prior, jac)
    }

    /// Log posterior split into its components.
    pub fn breakdown(&self, theta: &[f64]) -> Result<LogPostBreakdown> {
        self.evaluate(theta, None)
    }

    /// Unnormalized log posterior density of the unconstrained vector.
    pub fn log_posterior(&self, theta: &[f64]) -> Result<f64> {
        self.evaluate(theta, None)?.check()
    }

    /// Log posterior and its gradient (written into `grad`).
    pub fn log_posterior_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        if grad.len() != self.dim() {
            return Err(crate::error::invalid(
                "grad",
                "length must match the layout",
            ));
        }
        let lp = self.evaluate(theta, Some(grad))?.check()?;
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        Ok(lp)
    }

    fn evaluate(&self, theta: &[f64], grad: Option<&mut [f64]>) -> Result<LogPostBreakdown> {
        self.check_len(theta)?;
        let g = self.decode_globals(theta)?;
        let l = &self.layout;
        let mut out = LogPostBreakdown::default();
        let mut gg = grad.is_some().then(|| GlobalGrad {
            g: vec![0.0; l.n_global()],
            chol: [[0.0; N_RE]; N_RE],
        });
        let (prior, jac) = self.prior_terms(theta, &g, gg.as_mut());
        out.prior = prior;
        out.jacobian = jac;
        let mut grad = grad;
        if let Some(gr) = grad.as_deref_mut() {
            gr.fill(0.0);
        }
        for i in 0..self.data.len() {
            let (terms, latent_grad) = self.subject_terms(theta, &g, i, gg.as_mut())?;
            out.survival += terms.survival;
            out.random_effects += terms.random_effects;
            out.longitudinal += terms.longitudinal;
            out.jacobian += terms.jacobian;
            if let Some(gr) = grad.as_deref_mut() {
                let off = l.subject_offset(i);
                gr[off..off + N_RE].copy_from_slice(&latent_grad[..N_RE]);
                if let Some(k) = l.z_t_index(i) {
                    gr[k] = latent_grad[N_RE];
                }
            }
        }
        if let (Some(gr), Some(mut gg)) = (grad, gg) {
            let mut g_corr = [0.0; N_CORR];
            g.corr.backward(&gg.chol, self.priors.lkj_eta, &mut g_corr);
            for (k, v) in g_corr.iter().enumerate() {
                gg.g[l.corr + k] += v;
            }
            gr[..l.n_global()].copy_from_slice(&gg.g);
        }
        Ok(out)
    }

    /// Per-subject contributions; gradient of the latent block is returned
    /// as `[z_ω, z_b0, z_b1, z_b2, z_t]` and global partials are accumulated.
    fn subject_terms(
        &self,
        theta: &[f64],
        g: &Globals,
        i: usize,
        mut gg: Option<&mut GlobalGrad>,
    ) -> Result<(LogPostBreakdown, [f64; N_RE + 1])> {
        let l = &self.layout;
        let p = &g.params;
        let subj: &SubjectRecord = &self.data[i];
        let off = l.subject_offset(i);
        let z = [theta[off], theta[off + 1], theta[off + 2], theta[off + 3]];
        if let Some(k) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Decode {
                index: off + k,
                what: "non-finite latent coordinate".into(),
            });
        }
        let sd_w = p.sd_r[0];
        let mut terms = LogPostBreakdown::default();
        let mut lg = [0.0; N_RE + 1];

        // Decode the change point (and the event time for the joint model).
        let joint = l.kind == ModelKind::Joint;
        let zt_idx = l.z_t_index(i);
        let (t_star, sig, omega, u) = if joint {
            let t_star = self.t_star(theta, i);
            if !t_star.is_finite() {
                return Err(Error::Decode {
                    index: zt_idx.unwrap_or(off),
                    what: format!("event time of subject {}", subj.id),
                });
            }
            let sig = logistic(z[0]);
            let omega = t_star * sig;
            (t_star, sig, omega, (omega - p.mu_omega) / sd_w)
        } else {
            (subj.t_obs, f64::NAN, p.mu_omega + sd_w * z[0], z[0])
        };
        let zhat = [u, z[1], z[2], z[3]];
        let b = Self::b_from(g, &zhat);

        // Longitudinal likelihood.
        let inv_var = 1.0 / (p.sigma_y * p.sigma_y);
        let mut g_omega = 0.0;
        let mut g_b = [0.0; 3];
        let mut g_log_sigma_y = 0.0;
        let mut ll = 0.0;
        let log_sy = p.sigma_y.ln();
        let want_grad = gg.is_some();
        for ((&s, &y), x) in subj.s.iter().zip(&subj.y).zip(&subj.x) {
            let fixed: f64 = x.iter().zip(&p.beta).map(|(a, c)| a * c).sum();
            let delta = s - omega;
            let pre = delta <= 0.0;
            let slope = if pre { b[1] } else { b[2] };
            let e = y - (fixed + b[0] + slope * delta);
            ll += -LN_SQRT_2PI - log_sy - 0.5 * e * e * inv_var;
            if want_grad {
                let gm = e * inv_var;
                if let Some(gg) = gg.as_deref_mut() {
                    for (k, xv) in x.iter().enumerate() {
                        gg.g[l.beta + k] += gm * xv;
                    }
                }
                g_b[0] += gm;
                if pre {
                    g_b[1] += gm * delta;
                } else {
                    g_b[2] += gm * delta;
                }
                g_omega -= gm * slope;
                g_log_sigma_y += -1.0 + e * e * inv_var;
            }
        }
        terms.longitudinal = ll;

        // Random effects: standard-normal latents plus, for the joint model,
        // the truncated change-point density.
        let mut re: f64 = z[1..].iter().map(|&v| std_normal_logpdf(v)).sum();
        re += std_normal_logpdf(u);
        let mut g_mu_omega = 0.0;
        let mut g_log_sd_w = 0.0;
        let mut g_t = 0.0;
        let (lambda, upsilon, log_z) = if joint {
            let lambda = -p.mu_omega / sd_w;
            let upsilon = (t_star - p.mu_omega) / sd_w;
            let log_z = log_normal_mass(lambda, upsilon);
            re += -sd_w.ln() - log_z;
            (lambda, upsilon, log_z)
        } else {
            (f64::NAN, f64::NAN, 0.0)
        };
        terms.random_effects = re;

        // Survival.
        let mut g_h = None;
        if joint {
            let lp: f64 = subj.w.iter().zip(&p.gamma).map(|(a, c)| a * c).sum();
            let log_t = t_star.ln();
            let h = p.eta * (p.alpha * log_t).exp() * lp.exp();
            terms.survival = p.eta.ln() + p.alpha.ln() + (p.alpha - 1.0) * log_t + lp - h;
            let jac_omega = log_t - softplus(-z[0]) - softplus(z[0]);
            terms.jacobian = jac_omega + zt_idx.map_or(0.0, |k| theta[k]);
            g_h = Some((h, log_t));
        }

        let Some(gg) = gg else {
            return Ok((terms, lg));
        };

        // Chain rule through b = μ_b + σ_b C ẑ.
        let c = &g.corr.chol;
        let mut g_zhat = [0.0; N_RE];
        for k in 0..3 {
            let row = k + 1;
            gg.g[l.mu_b + k] += g_b[k];
            gg.g[l.log_sd + row] += g_b[k] * (b[k] - p.mu_b[k]);
            let scaled = g_b[k] * p.sd_r[row];
            for m in 0..=row {
                gg.chol[row][m] += scaled * zhat[m];
                g_zhat[m] += scaled * c[row][m];
            }
        }
        gg.g[l.log_sigma_y] += g_log_sigma_y;
        for k in 1..N_RE {
            lg[k] = g_zhat[k] - z[k];
        }
        let g_u = g_zhat[0] - u;

        if joint {
            // u = (ω − μ_ω)/σ_ω, with −log σ_ω from the normal density.
            g_omega += g_u / sd_w;
            g_mu_omega -= g_u / sd_w;
            g_log_sd_w += -g_u * u - 1.0;
            // −log Z(υ, λ).
            let d_up = (std_normal_logpdf(upsilon) - log_z).exp();
            let d_lo = -(std_normal_logpdf(lambda) - log_z).exp();
            g_t -= d_up / sd_w;
            g_mu_omega += (d_up + d_lo) / sd_w;
            g_log_sd_w += d_up * upsilon + d_lo * lambda;
            // Weibull density at t*.
            let (h, log_t) = g_h.expect("joint model computes hazard");
            for (k, wv) in subj.w.iter().enumerate() {
                gg.g[l.gamma + k] += wv * (1.0 - h);
            }
            gg.g[l.log_eta] += 1.0 - h;
            gg.g[l.log_alpha] += 1.0 + p.alpha * log_t * (1.0 - h);
            g_t += (p.alpha - 1.0 - p.alpha * h) / t_star;
            // ω = t*·s(z_ω) and its Jacobian.
            lg[0] = g_omega * t_star * sig * (1.0 - sig) + (1.0 - 2.0 * sig);
            g_t += g_omega * sig + 1.0 / t_star;
            if let Some(k) = zt_idx {
                lg[N_RE] = g_t * theta[k].exp() + 1.0;
            }
        } else {
            // ω = μ_ω + σ_ω z_ω, and u = z_ω.
            lg[0] = g_u + g_omega * sd_w;
            g_mu_omega += g_omega;
            g_log_sd_w += g_omega * sd_w * z[0];
        }
        gg.g[l.mu_omega] += g_mu_omega;
        gg.g[l.log_sd] += g_log_sd_w;
        Ok((terms, lg))
    }

    /// Names of the values produced by [`Self::constrain`].
    pub fn param_names(&self) -> Vec<String> {
        let l = &self.layout;
        let mut names = Vec::new();
        if l.has_survival() {
            names.extend((1..=l.p_w).map(|k| format!("gamma[{k}]")));
            names.push("eta".into());
            names.push("alpha".into());
        }
        names.extend((1..=l.p_x).map(|k| format!("beta[{k}]")));
        names.push("sigma_y".into());
        names.push("mu_omega".into());
        names.extend(["mu_b0", "mu_b1", "mu_b2"].map(String::from));
        names.extend(["sigma_omega", "sigma_b0", "sigma_b1", "sigma_b2"].map(String::from));
        let re = ["omega", "b0", "b1", "b2"];
        for i in 1..N_RE {
            for j in 0..i {
                names.push(format!("corr_{}_{}", re[j], re[i]));
            }
        }
        if self.latent_output {
            for s in self.data.subjects() {
                for r in re {
                    names.push(format!("{r}[{}]", s.id));
                }
                if l.has_survival() {
                    names.push(format!("t_star[{}]", s.id));
                }
            }
        }
        names
    }

    /// Constrained-scale values matching [`Self::param_names`].
    pub fn constrain(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.decode(theta)?;
        let p = &d.params;
        let mut v = Vec::with_capacity(self.param_names().len());
        if self.layout.has_survival() {
            v.extend(&p.gamma);
            v.push(p.eta);
            v.push(p.alpha);
        }
        v.extend(&p.beta);
        v.push(p.sigma_y);
        v.push(p.mu_omega);
        v.extend(p.mu_b);
        v.extend(p.sd_r);
        for i in 1..N_RE {
            for j in 0..i {
                v.push(p.corr[i][j]);
            }
        }
        if self.latent_output {
            for s in &d.subjects {
                v.push(s.omega);
                v.extend(s.b);
                if self.layout.has_survival() {
                    v.push(s.t_star);
                }
            }
        }
        Ok(v)
    }

    /// A data-informed starting point.
    ///
    /// `β` and the intercept mean come from pooled least squares of `y` on
    /// `(x, 1)`, `σ_y` from the residual scale, the Weibull block from the
    /// exponential rate estimate, other means from the prior centres and
    /// correlations from the identity. Globals receive `N(0, (0.1·jitter)²)`
    /// perturbations and latent coordinates `N(0, jitter²)` draws truncated
    /// to `|z| ≤ jitter`.
    pub fn initial_point<R: Rng + ?Sized>(&self, rng: &mut R, jitter: f64) -> Vec<f64> {
        let l = &self.layout;
        let mut theta = vec![0.0; self.dim()];
        let (beta, intercept, resid_sd, b0_sd) = self.least_squares_start();
        if l.has_survival() {
            let events = self
                .data
                .subjects()
                .iter()
                .filter(|s| s.event)
                .count()
                .max(1);
            let exposure: f64 = self.data.subjects().iter().map(|s| s.t_obs).sum();
            theta[l.log_eta] = (events as f64 / exposure).ln();
            theta[l.log_alpha] = 0.0;
        }
        theta[l.beta..l.beta + l.p_x].copy_from_slice(&beta);
        theta[l.log_sigma_y] = resid_sd.clamp(1e-3, 10.0).ln();
        theta[l.mu_omega] = self.priors.mu_omega.mu;
        theta[l.mu_b] = intercept;
        theta[l.mu_b + 1] = self.priors.mu_b[1].mu;
        theta[l.mu_b + 2] = self.priors.mu_b[2].mu;
        let sd0 = [0.3, b0_sd.clamp(0.05, 2.0), 0.3, 0.3];
        for k in 0..N_RE {
            theta[l.log_sd + k] = sd0[k].ln();
        }
        let global_scale = 0.1 * jitter;
        for v in theta[..l.n_global()].iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += global_scale * e;
        }
        for v in theta[l.latent..].iter_mut() {
            *v = if jitter > 0.0 {
                loop {
                    let e: f64 = rng.sample(StandardNormal);
                    if e.abs() <= 1.0 {
                        break jitter * e;
                    }
                }
            } else {
                0.0
            };
        }
        theta
    }

    /// Pooled least squares of `y` on `(x, 1)`: returns `(β, intercept,
    /// residual sd, sd of per-subject mean residuals)`.
    fn least_squares_start(&self) -> (Vec<f64>, f64, f64, f64) {
        let p = self.layout.p_x;
        let k = p + 1;
        let mut xtx = nalgebra::DMatrix::<f64>::zeros(k, k);
        let mut xty = nalgebra::DVector::<f64>::zeros(k);
        let mut row = vec![0.0; k];
        for s in self.data.subjects() {
            for (x, &y) in s.x.iter().zip(&s.y) {
                row[..p].copy_from_slice(x);
                row[p] = 1.0;
                for a in 0..k {
                    xty[a] += row[a] * y;
                    for c in 0..k {
                        xtx[(a, c)] += row[a] * row[c];
                    }
                }
            }
        }
        for a in 0..k {
            xtx[(a, a)] += 1e-8;
        }
        let coef = xtx
            .cholesky()
            .map(|c| c.solve(&xty))
            .unwrap_or_else(|| nalgebra::DVector::zeros(k));
        let mut ss = 0.0;
        let mut n = 0usize;
        let mut subject_means = Vec::new();
        for s in self.data.subjects() {
            let mut sum = 0.0;
            for (x, &y) in s.x.iter().zip(&s.y) {
                let fit: f64 = x.iter().zip(coef.iter()).map(|(a, c)| a * c).sum::<f64>() + coef[p];
                ss += (y - fit).powi(2);
                sum += y - fit;
                n += 1;
            }
            if !s.y.is_empty() {
                subject_means.push(sum / s.y.len() as f64);
            }
        }
        let resid_sd = if n > k {
            (ss / (n - k) as f64).sqrt()
        } else {
            1.0
        };
        let m = subject_means.len().max(1) as f64;
        let mean = subject_means.iter().sum::<f64>() / m;
        let b0_sd = (subject_means
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / m)
            .sqrt();
        (coef.as_slice()[..p].to_vec(), coef[p], resid_sd, b0_sd)
    }
}
