use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

use super::params::{cholesky_lower, ModelParams, N_RE};

/// Generalized normal prior with kernel `exp{−(|x − μ|/α)^β}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GndPrior {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl GndPrior {
    pub const fn new(mu: f64, alpha: f64, beta: f64) -> Self {
        Self { mu, alpha, beta }
    }

    pub fn logpdf(&self, x: f64) -> f64 {
        gnd_logpdf(x, self.mu, self.alpha, self.beta)
    }

    pub(crate) fn logpdf_and_deriv(&self, x: f64) -> (f64, f64) {
        let d = x - self.mu;
        let r = d.abs() / self.alpha;
        if r == 0.0 {
            return (0.0, 0.0);
        }
        let p = r.powf(self.beta - 1.0);
        (-p * r, -self.beta * p * d.signum() / self.alpha)
    }
}

/// Unnormalized GND log density `−(|x − μ|/α)^β`.
pub fn gnd_logpdf(x: f64, mu: f64, alpha: f64, beta: f64) -> f64 {
    -((x - mu).abs() / alpha).powf(beta)
}

/// LKJ log density kernel `(η − 1) log det Γ`.
pub fn correlation_logprior(corr: &[[f64; N_RE]; N_RE], eta_lkj: f64) -> Result<f64> {
    let l = cholesky_lower(corr)
        .ok_or_else(|| Error::NotPositiveDefinite("correlation matrix".into()))?;
    let log_det: f64 = (0..N_RE).map(|i| 2.0 * l[i][i].ln()).sum();
    Ok((eta_lkj - 1.0) * log_det)
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub mu_omega: GndPrior,
    pub mu_b: [GndPrior; 3],
    /// Normal prior SD for the survival coefficients.
    pub gamma_sd: f64,
    /// Normal prior SD for the longitudinal fixed effects.
    pub beta_sd: f64,
    /// Half-normal scales.
    pub eta_scale: f64,
    pub alpha_scale: f64,
    pub sigma_y_scale: f64,
    pub sd_r_scale: [f64; N_RE],
    /// LKJ concentration for the random-effect correlation matrix.
    pub lkj_eta: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            mu_omega: GndPrior::new(0.5, 0.5, 8.0),
            mu_b: [
                GndPrior::new(0.0, 1.0, 8.0),
                GndPrior::new(-0.5, 0.5, 8.0),
                GndPrior::new(0.5, 0.5, 8.0),
            ],
            gamma_sd: 10.0,
            beta_sd: 10.0,
            eta_scale: 10.0,
            alpha_scale: 10.0,
            sigma_y_scale: 10.0,
            sd_r_scale: [1.0; N_RE],
            lkj_eta: 1.0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        let scales = [
            ("gamma_sd", self.gamma_sd),
            ("beta_sd", self.beta_sd),
            ("eta_scale", self.eta_scale),
            ("alpha_scale", self.alpha_scale),
            ("sigma_y_scale", self.sigma_y_scale),
            ("lkj_eta", self.lkj_eta),
        ];
        for (name, v) in scales
            .into_iter()
            .chain(self.sd_r_scale.iter().map(|&v| ("sd_r_scale", v)))
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        for (i, g) in std::iter::once(&self.mu_omega)
            .chain(&self.mu_b)
            .enumerate()
        {
            if !(g.alpha > 0.0) || !(g.beta >= 1.0) || !g.mu.is_finite() {
                return Err(invalid(
                    "gnd",
                    format!("prior {i} needs alpha > 0 and beta >= 1, got {g:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Unnormalized log prior on the constrained scale (no Jacobians).
    pub fn log_prior(&self, p: &ModelParams) -> Result<f64> {
        Ok(self.log_prior_survival(p) + self.log_prior_longitudinal(p)?)
    }

    /// Prior of the survival block `(γ, η, α)`.
    pub fn log_prior_survival(&self, p: &ModelParams) -> f64 {
        let normal = |x: f64, s: f64| -0.5 * (x / s).powi(2);
        p.gamma
            .iter()
            .map(|&g| normal(g, self.gamma_sd))
            .sum::<f64>()
            + normal(p.eta, self.eta_scale)
            + normal(p.alpha, self.alpha_scale)
    }

    /// Prior of every parameter outside the survival block.
    pub fn log_prior_longitudinal(&self, p: &ModelParams) -> Result<f64> {
        let normal = |x: f64, s: f64| -0.5 * (x / s).powi(2);
        let mut lp = 0.0;
        lp += p.beta.iter().map(|&b| normal(b, self.beta_sd)).sum::<f64>();
        lp += normal(p.sigma_y, self.sigma_y_scale);
        lp += self.mu_omega.logpdf(p.mu_omega);
        lp += self
            .mu_b
            .iter()
            .zip(&p.mu_b)
            .map(|(g, &m)| g.logpdf(m))
            .sum::<f64>();
        lp += self
            .sd_r_scale
            .iter()
            .zip(&p.sd_r)
            .map(|(&s, &v)| normal(v, s))
            .sum::<f64>();
        lp += correlation_logprior(&p.corr, self.lkj_eta)?;
        Ok(lp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gnd_values() {
        assert_eq!(gnd_logpdf(0.5, 0.5, 0.5, 8.0), 0.0);
        assert!((gnd_logpdf(1.0, 0.5, 0.5, 8.0) + 1.0).abs() < 1e-15);
        // Independent evaluation: ((1.5 − 0.5)/0.5)^8 = 2^8.
        assert!((gnd_logpdf(1.5, 0.5, 0.5, 8.0) + 2f64.powi(8)).abs() < 1e-12);
        let sigma: f64 = 0.7;
        let a = 2f64.sqrt() * sigma;
        for &x in &[-1.0, 0.2, 2.3] {
            let normal = -(x - 0.3f64).powi(2) / (2.0 * sigma * sigma);
            assert!((gnd_logpdf(x, 0.3, a, 2.0) - normal).abs() < 1e-14);
        }
    }

    #[test]
    fn gnd_derivative_is_finite_and_zero_at_center() {
        let g = GndPrior::new(0.5, 0.5, 8.0);
        assert_eq!(g.logpdf_and_deriv(0.5), (0.0, 0.0));
        for &x in &[0.5 - 1e-12, 0.5 + 1e-12, -2.0, 3.0] {
            let (v, d) = g.logpdf_and_deriv(x);
            assert!(v.is_finite() && d.is_finite());
            let h = 1e-6;
            let fd = (g.logpdf(x + h) - g.logpdf(x - h)) / (2.0 * h);
            assert!((fd - d).abs() < 1e-5 * (1.0 + d.abs()));
        }
    }

    #[test]
    fn lkj_values() {
        let id = [
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ];
        assert_eq!(correlation_logprior(&id, 3.0).unwrap(), 0.0);
        let mut g = id;
        g[0][1] = 0.5;
        g[1][0] = 0.5;
        // det = 1 − 0.25.
        assert!((correlation_logprior(&g, 2.0).unwrap() - 0.75f64.ln()).abs() < 1e-14);
        assert_eq!(correlation_logprior(&g, 1.0).unwrap(), 0.0);
        g[0][1] = 1.5;
        g[1][0] = 1.5;
        assert!(correlation_logprior(&g, 2.0).is_err());
    }

    #[test]
    fn defaults_are_valid() {
        PriorConfig::default().validate().unwrap();
    }
}
