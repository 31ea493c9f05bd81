//! Partially truncated multivariate normal (PTMVN).
//!
//! A `q`-dimensional normal `N(μ, Σ)` whose first coordinate `ω` is
//! restricted to `(l, u)` and renormalised. Vectors are stored with `ω`
//! first, `r = (ω, b′)′`, so `Σ[0,0] = σ_ω²` and `Σ[1.., 0] = σ_bω`. A
//! parameter set written in the `(b′, ω)′` order must be permuted before
//! construction.
//!
//! The ω = s boundary of the interval indicators used by [`partial_moment`]
//! has probability zero, so open and closed interval conventions agree.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::truncnorm::{
    log_normal_mass, std_normal_logpdf, tn_moments, tn_sample, TruncNormParams, LN_SQRT_2PI,
};

/// Eigenvalues of conditional covariances above this negative threshold are
/// clamped to zero.
const EIGEN_CLAMP: f64 = -1e-10;

#[derive(Debug, Clone)]
pub struct PtmvnParams {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    l: f64,
    u: f64,
    omega: TruncNormParams,
}

impl PtmvnParams {
    pub fn new(mu: Vec<f64>, sigma: DMatrix<f64>, l: f64, u: f64) -> Result<Self> {
        let q = mu.len();
        if q == 0 {
            return Err(invalid("mu", "dimension must be at least 1"));
        }
        if sigma.nrows() != q || sigma.ncols() != q {
            return Err(invalid(
                "sigma",
                format!("expected {q}x{q}, got {}x{}", sigma.nrows(), sigma.ncols()),
            ));
        }
        for i in 0..q {
            for j in 0..i {
                let (x, y) = (sigma[(i, j)], sigma[(j, i)]);
                if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::NotPositiveDefinite(format!(
                        "sigma is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("Cholesky of sigma failed".into()))?;
        let omega = TruncNormParams::new(mu[0], sigma[(0, 0)].sqrt(), l, u)?;
        Ok(Self {
            mu: DVector::from_vec(mu),
            sigma,
            chol,
            l,
            u,
            omega,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Lower Cholesky factor of `Σ`.
    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn lower(&self) -> f64 {
        self.l
    }

    pub fn upper(&self) -> f64 {
        self.u
    }

    pub fn sd_omega(&self) -> f64 {
        self.omega.sigma
    }

    /// `λ = (l − μ_ω)/σ_ω`.
    pub fn lambda(&self) -> f64 {
        self.omega.alpha()
    }

    /// `υ = (u − μ_ω)/σ_ω`.
    pub fn upsilon(&self) -> f64 {
        self.omega.beta()
    }

    /// `log(Φ(υ) − Φ(λ))`.
    pub fn log_mass(&self) -> f64 {
        self.omega.log_mass()
    }

    /// Marginal law of ω: `TN(μ_ω, σ_ω², l, u)`.
    pub fn omega_marginal(&self) -> TruncNormParams {
        self.omega
    }

    /// `σ_∘1 / σ_ω`: first column of `Σ` scaled by `1/σ_ω`.
    pub fn q_vector(&self) -> DVector<f64> {
        self.sigma.column(0) / self.sd_omega()
    }

    fn sigma_b(&self) -> DMatrix<f64> {
        let q = self.dim();
        self.sigma.view((1, 1), (q - 1, q - 1)).into_owned()
    }

    fn sigma_b_omega(&self) -> DVector<f64> {
        let q = self.dim();
        self.sigma.view((1, 0), (q - 1, 1)).column(0).into_owned()
    }
}

/// Normal law of a sub-vector given the remaining coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalNormal {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn ptmvn_logpdf(r: &[f64], p: &PtmvnParams) -> f64 {
    assert_eq!(r.len(), p.dim(), "dimension mismatch");
    if !(p.l < r[0] && r[0] < p.u) {
        return f64::NEG_INFINITY;
    }
    let diff = DVector::from_column_slice(r) - &p.mu;
    let z = p
        .chol
        .l_dirty()
        .solve_lower_triangular(&diff)
        .expect("cholesky factor is invertible");
    let log_det: f64 = p.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * z.norm_squared() - log_det - p.dim() as f64 * LN_SQRT_2PI - p.log_mass()
}

/// Law of `b` given `ω`: mean `μ_b + σ_bω (ω − μ_ω)/σ_ω²`, covariance
/// `Σ_b − σ_bω σ_bω′ / σ_ω²`.
pub fn cond_b_given_omega(omega: f64, p: &PtmvnParams) -> Result<ConditionalNormal> {
    if !(p.l < omega && omega < p.u) {
        return Err(Error::OutsideSupport(format!(
            "omega {omega} outside ({}, {})",
            p.l, p.u
        )));
    }
    let q = p.dim();
    let var_w = p.sigma[(0, 0)];
    let s_bw = p.sigma_b_omega();
    let mean = p.mu.rows(1, q - 1) + &s_bw * ((omega - p.mu[0]) / var_w);
    let cov = p.sigma_b() - &s_bw * s_bw.transpose() / var_w;
    Ok(ConditionalNormal {
        mean,
        cov: clamp_psd(cov)?,
    })
}

/// Law of `ω` given `b`: `TN(μ_ω|b, σ²_ω|b, l, u)`.
pub fn cond_omega_given_b(b: &[f64], p: &PtmvnParams) -> Result<TruncNormParams> {
    let q = p.dim();
    if b.len() != q - 1 {
        return Err(invalid(
            "b",
            format!("expected length {}, got {}", q - 1, b.len()),
        ));
    }
    let s_bw = p.sigma_b_omega();
    let chol_b = Cholesky::new(p.sigma_b())
        .ok_or_else(|| Error::NotPositiveDefinite("Sigma_b is singular".into()))?;
    let diff = DVector::from_column_slice(b) - p.mu.rows(1, q - 1);
    let mean = p.mu[0] + s_bw.dot(&chol_b.solve(&diff));
    let var = p.sigma[(0, 0)] - s_bw.dot(&chol_b.solve(&s_bw));
    if !(var > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "conditional variance of omega is {var}"
        )));
    }
    TruncNormParams::new(mean, var.sqrt(), p.l, p.u)
}

fn clamp_psd(cov: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.nrows() == 0 {
        return Ok(cov);
    }
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < EIGEN_CLAMP {
        return Err(Error::NotPositiveDefinite(format!(
            "conditional covariance has eigenvalue {min}"
        )));
    }
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Direct sampler: `ω ~ TN(μ_ω, σ_ω², l, u)`, then `b | ω` through the
/// Cholesky factor of `Σ`, `b = μ_b + l₂₁ (ω − μ_ω)/l₁₁ + L₂₂ z`.
pub fn ptmvn_sample<R: Rng + ?Sized>(rng: &mut R, p: &PtmvnParams) -> Vec<f64> {
    let q = p.dim();
    let l = p.chol.l_dirty();
    let omega = tn_sample(rng, &p.omega);
    let mut z = vec![0.0; q];
    z[0] = (omega - p.mu[0]) / l[(0, 0)];
    for zi in z.iter_mut().skip(1) {
        *zi = StandardNormal.sample(rng);
    }
    let mut r = vec![0.0; q];
    r[0] = omega;
    for i in 1..q {
        let mut v = p.mu[i];
        for (j, zj) in z.iter().enumerate().take(i + 1) {
            v += l[(i, j)] * zj;
        }
        r[i] = v;
    }
    r
}

/// `log M(t)` with `M(t) = C(t)/(Φ(υ) − Φ(λ)) · exp(t′μ + ½ t′Σt)` and
/// `C(t) = Φ(υ − t′q) − Φ(λ − t′q)`.
pub fn ptmvn_log_mgf(t: &[f64], p: &PtmvnParams) -> f64 {
    assert_eq!(t.len(), p.dim(), "dimension mismatch");
    let t = DVector::from_column_slice(t);
    let shift = t.dot(&p.q_vector());
    let log_c = log_normal_mass(p.lambda() - shift, p.upsilon() - shift);
    let quad = (t.transpose() * &p.sigma * &t)[(0, 0)];
    log_c - p.log_mass() + t.dot(&p.mu) + 0.5 * quad
}

pub fn ptmvn_mgf(t: &[f64], p: &PtmvnParams) -> Result<f64> {
    let log_mgf = ptmvn_log_mgf(t, p);
    let v = log_mgf.exp();
    if !v.is_finite() {
        return Err(Error::MgfOverflow { log_mgf });
    }
    Ok(v)
}

/// `E[r] = μ − (φ(υ) − φ(λ))/(Φ(υ) − Φ(λ)) · q`.
pub fn ptmvn_mean(p: &PtmvnParams) -> Vec<f64> {
    let lm = p.log_mass();
    let dens = |x: f64| {
        if x.is_finite() {
            (std_normal_logpdf(x) - lm).exp()
        } else {
            0.0
        }
    };
    let ratio = dens(p.upsilon()) - dens(p.lambda());
    (&p.mu - p.q_vector() * ratio).as_slice().to_vec()
}

/// Monte Carlo covariance of the PTMVN from `draws` direct samples.
pub fn ptmvn_cov_mc<R: Rng + ?Sized>(rng: &mut R, p: &PtmvnParams, draws: usize) -> DMatrix<f64> {
    let q = p.dim();
    let mut mean = DVector::zeros(q);
    let mut m2 = DMatrix::zeros(q, q);
    for k in 0..draws {
        let r = DVector::from_vec(ptmvn_sample(rng, p));
        let delta = &r - &mean;
        mean += &delta / (k + 1) as f64;
        let delta2 = &r - &mean;
        m2 += &delta * delta2.transpose();
    }
    m2 / (draws.max(2) - 1) as f64
}

/// `E[ω^m Δ^k 1{α ≤ Δ ≤ β}]` with `Δ = s − ω` and `ω ~ tn`.
///
/// The event is `ω ∈ [s − β, s − α]`, intersected with the support `(a, b)`
/// of `tn`. Writing `(lo, hi)` for the intersection,
///
/// ```text
/// E = P(lo < ω < hi) · Σ_l C(k,l) (−1)^l s^(k−l) m_TN^(m+l)(μ, σ, lo, hi)
/// ```
///
/// where `P(lo < ω < hi) = [Φ(hi') − Φ(lo')]/[Φ(b') − Φ(a')]` (primes denote
/// standardization). An empty intersection contributes zero.
pub fn partial_moment(m: u32, k: u32, s: f64, alpha: f64, beta: f64, tn: &TruncNormParams) -> f64 {
    let lo = tn.a.max(s - beta);
    let hi = tn.b.min(s - alpha);
    if !(lo < hi) {
        return 0.0;
    }
    let inner = match TruncNormParams::new(tn.mu, tn.sigma, lo, hi) {
        Ok(p) => p,
        // The sub-interval carries numerically no mass.
        Err(_) => return 0.0,
    };
    let prob = (inner.log_mass() - tn.log_mass()).exp();
    let moments = tn_moments(m + k, &inner);
    let mut sum = 0.0;
    let mut binom = 1.0;
    for l in 0..=k {
        let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
        sum += binom * sign * s.powi((k - l) as i32) * moments[(m + l) as usize];
        binom *= (k - l) as f64 / (l + 1) as f64;
    }
    prob * sum
}
