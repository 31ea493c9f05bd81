//! Scalar normal and truncated-normal primitives.
//!
//! Normalising masses `Φ(β) − Φ(α)` are always handled in log space. Inside
//! `[-8, 8]` the error function is accurate in relative terms; beyond it the
//! tail is evaluated through the continued fraction of Mills' ratio so that
//! intervals deep in either tail keep full relative precision.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{invalid, Error, Result};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const SQRT_2: f64 = std::f64::consts::SQRT_2;
const TAIL_SWITCH: f64 = 8.0;

/// Masses below this are treated as an empty truncation region.
pub const MIN_MASS: f64 = 1e-300;

#[inline]
pub fn std_normal_logpdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}

#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    std_normal_logpdf(x).exp()
}

/// Standard normal CDF. NaN input is rejected.
pub fn std_normal_cdf(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(invalid("x", "NaN passed to the normal CDF"));
    }
    Ok(phi(x))
}

/// Unchecked `Φ(x)`.
#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Mills' ratio `Q(x) / φ(x)` for `x >= TAIL_SWITCH`, by backward evaluation
/// of the continued fraction `1 / (x + 1/(x + 2/(x + 3/(x + ...))))`.
fn mills_ratio_tail(x: f64) -> f64 {
    let mut t = x;
    for k in (1..=60).rev() {
        t = x + k as f64 / t;
    }
    1.0 / t
}

/// `log Φ(x)`, accurate in both tails.
pub fn log_std_normal_cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else if x == f64::INFINITY {
        0.0
    } else if x < -TAIL_SWITCH {
        std_normal_logpdf(x) + mills_ratio_tail(-x).ln()
    } else if x < 0.0 {
        (0.5 * libm::erfc(-x / SQRT_2)).ln()
    } else if x < TAIL_SWITCH {
        (-0.5 * libm::erfc(x / SQRT_2)).ln_1p()
    } else {
        -(std_normal_logpdf(x).exp() * mills_ratio_tail(x))
    }
}

/// `log(1 − exp(d))` for `d <= 0`.
#[inline]
pub(crate) fn log1m_exp(d: f64) -> f64 {
    if d > -std::f64::consts::LN_2 {
        (-d.exp_m1()).ln()
    } else {
        (-d.exp()).ln_1p()
    }
}

#[inline]
pub(crate) fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// `log(Φ(hi) − Φ(lo))` for standardized bounds `lo < hi` (either may be infinite).
pub fn log_normal_mass(lo: f64, hi: f64) -> f64 {
    if !(lo < hi) {
        return f64::NEG_INFINITY;
    }
    if lo >= 0.0 {
        // Upper tail: Q(lo) − Q(hi) = Φ(−lo) − Φ(−hi).
        return log_normal_mass(-hi, -lo);
    }
    if hi <= 0.0 {
        let lb = log_std_normal_cdf(hi);
        let la = log_std_normal_cdf(lo);
        if la == f64::NEG_INFINITY {
            return lb;
        }
        return lb + log1m_exp(la - lb);
    }
    // Straddles zero: both erf terms are nonnegative, no cancellation.
    (0.5 * (libm::erf(hi / SQRT_2) + libm::erf(-lo / SQRT_2))).ln()
}

/// Parameters of a univariate truncated normal `TN(μ, σ², a, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormParams {
    pub mu: f64,
    pub sigma: f64,
    pub a: f64,
    pub b: f64,
    log_mass: f64,
}

impl TruncNormParams {
    pub fn new(mu: f64, sigma: f64, a: f64, b: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(invalid("mu", format!("must be finite, got {mu}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(invalid("sigma", format!("must be positive, got {sigma}")));
        }
        if a.is_nan() || b.is_nan() || !(a < b) {
            return Err(invalid("bounds", format!("need a < b, got ({a}, {b})")));
        }
        let log_mass = log_normal_mass((a - mu) / sigma, (b - mu) / sigma);
        if !(log_mass >= MIN_MASS.ln()) {
            return Err(Error::DegenerateTruncation { log_mass });
        }
        Ok(Self {
            mu,
            sigma,
            a,
            b,
            log_mass,
        })
    }

    /// Standardized lower bound `(a − μ)/σ`.
    pub fn alpha(&self) -> f64 {
        (self.a - self.mu) / self.sigma
    }

    /// Standardized upper bound `(b − μ)/σ`.
    pub fn beta(&self) -> f64 {
        (self.b - self.mu) / self.sigma
    }

    /// `log(Φ(β) − Φ(α))`.
    pub fn log_mass(&self) -> f64 {
        self.log_mass
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a < x && x < self.b
    }
}

pub fn tn_logpdf(x: f64, p: &TruncNormParams) -> f64 {
    if !p.contains(x) {
        return f64::NEG_INFINITY;
    }
    std_normal_logpdf((x - p.mu) / p.sigma) - p.sigma.ln() - p.log_mass
}

/// CDF of the truncated normal.
pub fn tn_cdf(x: f64, p: &TruncNormParams) -> f64 {
    if x <= p.a {
        return 0.0;
    }
    if x >= p.b {
        return 1.0;
    }
    let z = (x - p.mu) / p.sigma;
    (log_normal_mass(p.alpha(), z) - p.log_mass).exp().min(1.0)
}

/// Exact draw from `TN(μ, σ², a, b)`.
pub fn tn_sample<R: Rng + ?Sized>(rng: &mut R, p: &TruncNormParams) -> f64 {
    let z = std_tn_sample(rng, p.alpha(), p.beta());
    (p.mu + p.sigma * z).clamp(next_up(p.a), next_down(p.b))
}

fn next_up(x: f64) -> f64 {
    if x.is_finite() {
        x.next_up()
    } else {
        x
    }
}

fn next_down(x: f64) -> f64 {
    if x.is_finite() {
        x.next_down()
    } else {
        x
    }
}

/// Standard normal restricted to `(lo, hi)`.
///
/// One-sided regions use Robert's choice between a uniform proposal and a
/// translated exponential proposal; regions straddling zero use uniform or
/// plain normal rejection depending on their width.
fn std_tn_sample<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo >= 0.0 {
        right_tail_sample(rng, lo, hi)
    } else if hi <= 0.0 {
        -right_tail_sample(rng, -hi, -lo)
    } else if hi - lo < (2.0 * std::f64::consts::PI).sqrt() {
        loop {
            let z = rng.random_range(lo..hi);
            if rng.random::<f64>() < (-0.5 * z * z).exp() {
                return z;
            }
        }
    } else {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if lo < z && z < hi {
                return z;
            }
        }
    }
}

fn right_tail_sample<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    let root = (lo * lo + 4.0).sqrt();
    let rate = 0.5 * (lo + root);
    let uniform_width = 2.0 * 0.5f64.exp() / (lo + root) * ((lo * lo - lo * root) / 4.0).exp();
    if hi - lo < uniform_width {
        loop {
            let z = rng.random_range(lo..hi);
            if rng.random::<f64>() < (0.5 * (lo * lo - z * z)).exp() {
                return z;
            }
        }
    }
    let exp = Exp::new(rate).expect("positive rate");
    loop {
        let z = lo + exp.sample(rng);
        if z >= hi {
            continue;
        }
        let d = z - rate;
        if rng.random::<f64>() < (-0.5 * d * d).exp() {
            return z;
        }
    }
}

/// k-th raw moment `E[X^k]` of the truncated normal.
///
/// Uses the recursion
///
/// ```text
/// m(k) = (k−1) σ² m(k−2) + μ m(k−1) − σ [b^(k−1) φ(β) − a^(k−1) φ(α)] / Z
/// ```
///
/// with `m(0) = 1`, `m(−1) = 0`, standardized bounds `α, β`, and
/// `Z = Φ(β) − Φ(α)`. A boundary term is dropped when its bound is infinite.
pub fn tn_moment(k: u32, p: &TruncNormParams) -> f64 {
    tn_moments(k, p)[k as usize]
}

/// All raw moments `E[X^0], ..., E[X^k]`.
pub fn tn_moments(k: u32, p: &TruncNormParams) -> Vec<f64> {
    let (mu, sigma) = (p.mu, p.sigma);
    // φ(α)/Z and φ(β)/Z in log space; zero for infinite bounds.
    let lower = if p.a.is_finite() {
        (std_normal_logpdf(p.alpha()) - p.log_mass).exp()
    } else {
        0.0
    };
    let upper = if p.b.is_finite() {
        (std_normal_logpdf(p.beta()) - p.log_mass).exp()
    } else {
        0.0
    };
    let mut m = Vec::with_capacity(k as usize + 1);
    m.push(1.0);
    let (mut a_pow, mut b_pow) = (1.0, 1.0);
    for j in 1..=k as usize {
        let prev2 = if j >= 2 { m[j - 2] } else { 0.0 };
        let boundary = b_pow * upper - a_pow * lower;
        let next = (j as f64 - 1.0) * sigma * sigma * prev2 + mu * m[j - 1] - sigma * boundary;
        m.push(next);
        if p.a.is_finite() {
            a_pow *= p.a;
        }
        if p.b.is_finite() {
            b_pow *= p.b;
        }
    }
    m
}
