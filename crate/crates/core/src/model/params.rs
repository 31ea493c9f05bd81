use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::ptmvn::PtmvnParams;

/// Number of random effects `(ω, b0, b1, b2)`.
pub const N_RE: usize = 4;
/// Free elements of a 4×4 correlation matrix.
pub const N_CORR: usize = N_RE * (N_RE - 1) / 2;

/// Structural parameters of the joint model.
///
/// Random-effect quantities are ordered `(ω, b0, b1, b2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Survival regression coefficients.
    pub gamma: Vec<f64>,
    /// Weibull scale.
    pub eta: f64,
    /// Weibull shape.
    pub alpha: f64,
    /// Longitudinal fixed effects.
    pub beta: Vec<f64>,
    pub sigma_y: f64,
    pub mu_omega: f64,
    pub mu_b: [f64; 3],
    /// Standard deviations `(σ_ω, σ_b0, σ_b1, σ_b2)`.
    pub sd_r: [f64; N_RE],
    /// Correlation matrix of the random effects.
    pub corr: [[f64; N_RE]; N_RE],
}

impl ModelParams {
    /// Generating values of the reference simulation scenario.
    pub fn reference_truth() -> Self {
        Self {
            gamma: vec![0.18],
            eta: 3.76,
            alpha: 1.88,
            beta: vec![-0.01],
            sigma_y: 0.08,
            mu_omega: 0.90,
            mu_b: [-0.50, -0.20, 0.60],
            sd_r: [0.15, 0.20, 0.27, 1.20],
            corr: [
                [1.000, -0.415, -0.220, -0.280],
                [-0.415, 1.000, 0.560, 0.200],
                [-0.220, 0.560, 1.000, 0.185],
                [-0.280, 0.200, 0.185, 1.000],
            ],
        }
    }

    pub fn mu_r(&self) -> [f64; N_RE] {
        [self.mu_omega, self.mu_b[0], self.mu_b[1], self.mu_b[2]]
    }

    /// `Σ_r = diag(sd) Γ diag(sd)`.
    pub fn sigma_r(&self) -> [[f64; N_RE]; N_RE] {
        let mut s = [[0.0; N_RE]; N_RE];
        for i in 0..N_RE {
            for j in 0..N_RE {
                s[i][j] = self.sd_r[i] * self.corr[i][j] * self.sd_r[j];
            }
        }
        s
    }

    /// Random-effect law with the change point truncated to `(0, upper)`.
    pub fn ptmvn(&self, upper: f64) -> Result<PtmvnParams> {
        self.ptmvn_bounded(0.0, upper)
    }

    pub fn ptmvn_bounded(&self, lower: f64, upper: f64) -> Result<PtmvnParams> {
        let s = self.sigma_r();
        let sigma = DMatrix::from_fn(N_RE, N_RE, |i, j| s[i][j]);
        PtmvnParams::new(self.mu_r().to_vec(), sigma, lower, upper)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta", self.eta), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        self.validate_longitudinal()
    }

    /// Checks everything except the survival block `(γ, η, α)`.
    pub fn validate_longitudinal(&self) -> Result<()> {
        let positive = [
            ("sigma_y", self.sigma_y),
            ("sigma_omega", self.sd_r[0]),
            ("sigma_b0", self.sd_r[1]),
            ("sigma_b1", self.sd_r[2]),
            ("sigma_b2", self.sd_r[3]),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(name, format!("must be positive, got {v}")));
            }
        }
        let finite = self
            .gamma
            .iter()
            .chain(&self.beta)
            .chain(&self.mu_b)
            .chain(std::iter::once(&self.mu_omega))
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("params", "non-finite coefficient"));
        }
        for i in 0..N_RE {
            if (self.corr[i][i] - 1.0).abs() > 1e-12 {
                return Err(invalid("corr", "diagonal must be one"));
            }
            for j in 0..i {
                if (self.corr[i][j] - self.corr[j][i]).abs() > 1e-12 {
                    return Err(invalid("corr", "must be symmetric"));
                }
            }
        }
        cholesky_lower(&self.corr)
            .ok_or_else(|| Error::NotPositiveDefinite("correlation matrix".into()))?;
        Ok(())
    }
}

/// Lower Cholesky factor of a small symmetric matrix, `None` if not positive definite.
pub fn cholesky_lower<const K: usize>(m: &[[f64; K]; K]) -> Option<[[f64; K]; K]> {
    let mut l = [[0.0; K]; K];
    for i in 0..K {
        for j in 0..=i {
            let mut sum = m[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > 0.0) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    Some(l)
}

/// `log(1 − tanh²(y))` without overflow.
#[inline]
fn log_sech2(y: f64) -> f64 {
    let a = y.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
}

/// Cholesky factor of a correlation matrix built from canonical partial
/// correlations `z = tanh(y)`, plus the intermediates needed for reverse-mode
/// differentiation.
///
/// Row `i` is filled left to right: `C[i][j] = z_ij · sqrt(1 − S_ij)` where
/// `S_ij` is the sum of squares of the entries already placed in the row,
/// and `C[i][i] = sqrt(1 − S_ii)`. Free elements are consumed in the order
/// `(1,0), (2,0), (2,1), (3,0), ...`.
#[derive(Debug, Clone)]
pub(crate) struct CorrTransform {
    pub chol: [[f64; N_RE]; N_RE],
    z: [f64; N_CORR],
    scale: [[f64; N_RE]; N_RE],
    log_sech2_sum: f64,
}

impl CorrTransform {
    pub fn forward(y: &[f64]) -> Self {
        debug_assert_eq!(y.len(), N_CORR);
        let mut chol = [[0.0; N_RE]; N_RE];
        let mut z = [0.0; N_CORR];
        let mut scale = [[0.0; N_RE]; N_RE];
        let mut log_sech2_sum = 0.0;
        chol[0][0] = 1.0;
        let mut idx = 0;
        for i in 1..N_RE {
            let mut sum_sq: f64 = 0.0;
            for j in 0..i {
                let zij = y[idx].tanh();
                log_sech2_sum += log_sech2(y[idx]);
                z[idx] = zij;
                let w = (1.0 - sum_sq).max(0.0).sqrt();
                scale[i][j] = w;
                chol[i][j] = zij * w;
                sum_sq += chol[i][j] * chol[i][j];
                idx += 1;
            }
            chol[i][i] = (1.0 - sum_sq).max(0.0).sqrt();
        }
        Self {
            chol,
            z,
            scale,
            log_sech2_sum,
        }
    }

    fn diag_coef(i: usize, lkj_eta: f64) -> f64 {
        (N_RE - i - 1) as f64 + 2.0 * (lkj_eta - 1.0)
    }

    /// Log Jacobian of `y ↦ Γ` plus the LKJ(η) log density of `Γ`.
    pub fn log_density(&self, lkj_eta: f64) -> f64 {
        let mut total = self.log_sech2_sum;
        for i in 1..N_RE {
            for j in 0..i {
                total += self.scale[i][j].ln();
            }
            total += Self::diag_coef(i, lkj_eta) * self.chol[i][i].ln();
        }
        total
    }

    /// Adds to `grad_y` the gradient, with respect to `y`, of
    /// `Σ g_chol[i][j] C[i][j] + log_density(lkj_eta)`.
    pub fn backward(&self, g_chol: &[[f64; N_RE]; N_RE], lkj_eta: f64, grad_y: &mut [f64]) {
        let row_start = |i: usize| i * (i - 1) / 2;
        for i in 1..N_RE {
            let c_ii = self.chol[i][i];
            let s_ii = 1.0 - c_ii * c_ii;
            // Adjoint of the running sum of squares, starting from its final value.
            let mut g_s =
                -g_chol[i][i] / (2.0 * c_ii) - 0.5 * Self::diag_coef(i, lkj_eta) / (1.0 - s_ii);
            for j in (0..i).rev() {
                let idx = row_start(i) + j;
                let c = self.chol[i][j];
                let w = self.scale[i][j];
                let z = self.z[idx];
                let g_c = g_chol[i][j] + 2.0 * c * g_s;
                let g_z = g_c * w;
                let g_w = g_c * z + 1.0 / w;
                g_s -= g_w / (2.0 * w);
                grad_y[idx] += g_z * (1.0 - z * z) - 2.0 * z;
            }
        }
    }
}

/// Cholesky factor of the correlation matrix encoded by `y` and the log
/// Jacobian of `y ↦ Γ`.
pub fn corr_cholesky_from_unconstrained(y: &[f64]) -> ([[f64; N_RE]; N_RE], f64) {
    let t = CorrTransform::forward(y);
    (t.chol, t.log_density(1.0))
}

/// Inverse of [`corr_cholesky_from_unconstrained`].
pub fn unconstrained_from_corr(corr: &[[f64; N_RE]; N_RE]) -> Result<[f64; N_CORR]> {
    let c = cholesky_lower(corr)
        .ok_or_else(|| Error::NotPositiveDefinite("correlation matrix".into()))?;
    let mut y = [0.0; N_CORR];
    let mut idx = 0;
    for i in 1..N_RE {
        let mut sum_sq: f64 = 0.0;
        for j in 0..i {
            let z = c[i][j] / (1.0 - sum_sq).sqrt();
            y[idx] = z.clamp(-1.0 + 1e-15, 1.0 - 1e-15).atanh();
            sum_sq += c[i][j] * c[i][j];
            idx += 1;
        }
    }
    Ok(y)
}
