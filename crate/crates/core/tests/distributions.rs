mod common;

use common::{random_sigma, rng, table_ptmvn};
use cpjoint::ptmvn::{
    cond_b_given_omega, cond_omega_given_b, partial_moment, ptmvn_cov_mc, ptmvn_logpdf, ptmvn_mean,
    ptmvn_mgf, ptmvn_sample, PtmvnParams,
};
use cpjoint::quad::integrate;
use cpjoint::truncnorm::{tn_cdf, tn_logpdf, tn_moment, tn_sample, TruncNormParams};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const INF: f64 = f64::INFINITY;

/// Truncation regions relative to `(μ, σ)`: bounded, one-sided, far tail.
fn bounds(mu: f64, sigma: f64, kind: u8, lo: f64, width: f64) -> (f64, f64) {
    match kind {
        0 => (mu + lo * sigma, mu + (lo + width) * sigma),
        1 => (mu + lo * sigma, INF),
        2 => (-INF, mu + lo * sigma),
        _ => (mu + 6.0 * sigma, INF),
    }
}

fn tn_strategy() -> impl Strategy<Value = TruncNormParams> {
    (
        -3.0..3.0f64,
        0.05..3.0f64,
        0u8..4,
        -2.5..2.5f64,
        0.2..4.0f64,
    )
        .prop_map(|(mu, sigma, kind, lo, width)| {
            let (a, b) = bounds(mu, sigma, kind, lo, width);
            TruncNormParams::new(mu, sigma, a, b).unwrap()
        })
}

/// `∫ g(x) f(x) dx` over the support of `p`, split at the mode region so
/// the adaptive rule sees the bulk.
fn tn_expect(p: &TruncNormParams, g: impl Fn(f64) -> f64) -> f64 {
    let f = |x: f64| g(x) * tn_logpdf(x, p).exp();
    let lo = p.a.max(p.mu - 12.0 * p.sigma);
    let hi = p.b.min(p.mu + 12.0 * p.sigma).max(lo + 12.0 * p.sigma);
    let hi = hi.min(p.b);
    let mut total = integrate(f, lo, hi, 1e-15).unwrap();
    if hi < p.b {
        total += integrate(f, hi, p.b, 1e-15).unwrap();
    }
    if p.a < lo {
        total += integrate(f, p.a, lo, 1e-15).unwrap();
    }
    total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn moments_match_quadrature(p in tn_strategy()) {
        for k in 0..=6 {
            let oracle = tn_expect(&p, |x| x.powi(k));
            let scale = tn_expect(&p, |x| x.abs().powi(k));
            let got = tn_moment(k as u32, &p);
            prop_assert!((got - oracle).abs() <= 1e-8 * scale, "k={k}: {got} vs {oracle}");
        }
    }

    #[test]
    fn density_integrates_to_one(p in tn_strategy()) {
        let mass = tn_expect(&p, |_| 1.0);
        prop_assert!((mass - 1.0).abs() < 1e-8, "mass {mass}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn untruncated_moments_are_normal_moments(mu in -5.0..5.0f64, sigma in 0.01..5.0f64) {
        let p = TruncNormParams::new(mu, sigma, -INF, INF).unwrap();
        let m2 = mu * mu + sigma * sigma;
        let m3 = mu.powi(3) + 3.0 * mu * sigma * sigma;
        prop_assert!((tn_moment(1, &p) - mu).abs() <= 1e-10 * mu.abs().max(sigma));
        prop_assert!((tn_moment(2, &p) - m2).abs() <= 1e-10 * m2);
        let scale = mu.abs().powi(3) + 3.0 * mu.abs() * sigma * sigma + sigma.powi(3);
        prop_assert!((tn_moment(3, &p) - m3).abs() <= 1e-10 * scale);
    }
}

/// Kolmogorov–Smirnov statistic of `xs` against `cdf`.
fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn samples_pass_ks_at_one_percent() {
    let mut r = rng(21);
    let n = 100_000;
    let crit = 1.628 / (n as f64).sqrt();
    for case in 0..10 {
        let mu = r.random_range(-2.0..2.0);
        let sigma = r.random_range(0.1..2.0);
        let (a, b) = bounds(
            mu,
            sigma,
            (case % 4) as u8,
            r.random_range(-2.0..2.0),
            r.random_range(0.2..3.0),
        );
        let p = TruncNormParams::new(mu, sigma, a, b).unwrap();
        let xs: Vec<f64> = (0..n).map(|_| tn_sample(&mut r, &p)).collect();
        assert!(xs.iter().all(|&x| a < x && x < b));
        let d = ks_statistic(xs, |x| tn_cdf(x, &p));
        assert!(d < crit, "case {case}: D = {d} >= {crit}");
    }
}

#[test]
fn far_tail_samples_match_moment() {
    let mut r = rng(4);
    let p = TruncNormParams::new(0.0, 1.0, 12.0, INF).unwrap();
    let n = 100_000;
    let xs: Vec<f64> = (0..n).map(|_| tn_sample(&mut r, &p)).collect();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let m1 = tn_moment(1, &p);
    let sd = (tn_moment(2, &p) - m1 * m1).sqrt();
    assert!((mean - m1).abs() < 4.0 * sd / (n as f64).sqrt());
}

/// `log N(x | μ, Σ)` from an independent Cholesky factorization.
fn mvn_logpdf(x: &DVector<f64>, mu: &DVector<f64>, sigma: &DMatrix<f64>) -> f64 {
    let l = sigma.clone().cholesky().unwrap().l();
    let z = l.solve_lower_triangular(&(x - mu)).unwrap();
    let log_det: f64 = l.diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * z.norm_squared() - log_det - x.len() as f64 * 0.5 * (2.0 * std::f64::consts::PI).ln()
}

#[test]
fn chain_rule_identity() {
    let mut r = rng(8);
    for _ in 0..100 {
        let q = r.random_range(2..=5);
        let sigma = random_sigma(&mut r, q);
        let mu: Vec<f64> = (0..q).map(|_| r.random_range(-1.0..1.0)).collect();
        let l = r.random_range(-1.0..0.5);
        let u = l + r.random_range(0.3..3.0);
        let p = PtmvnParams::new(mu, sigma, l, u).unwrap();
        let omega = r.random_range(l..u);
        let mut x = vec![omega];
        x.extend((1..q).map(|_| r.random_range(-2.0..2.0)));
        let cond = cond_b_given_omega(omega, &p).unwrap();
        let b = DVector::from_column_slice(&x[1..]);
        let rhs = tn_logpdf(omega, &p.omega_marginal()) + mvn_logpdf(&b, &cond.mean, &cond.cov);
        let lhs = ptmvn_logpdf(&x, &p);
        assert!(
            (lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0),
            "{lhs} vs {rhs}"
        );
    }
}

#[test]
fn marginalizing_b_recovers_truncated_normal() {
    let mut r = rng(9);
    for _ in 0..10 {
        let sigma = random_sigma(&mut r, 2);
        let mu = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let l = r.random_range(-1.0..0.5);
        let u = l + r.random_range(0.3..3.0);
        let p = PtmvnParams::new(mu.clone(), sigma.clone(), l, u).unwrap();
        let tn = p.omega_marginal();
        for _ in 0..3 {
            let omega = r.random_range(l..u);
            let sd_b = sigma[(1, 1)].sqrt();
            let f = |b: f64| ptmvn_logpdf(&[omega, b], &p).exp();
            let lo = mu[1] - 15.0 * sd_b - 10.0;
            let hi = mu[1] + 15.0 * sd_b + 10.0;
            let mass = integrate(f, lo, hi, 1e-14).unwrap();
            assert!((mass.ln() - tn_logpdf(omega, &tn)).abs() < 1e-8);
        }
    }
}

#[test]
fn density_normalizer_matches_importance_sampling() {
    // P(0 < ω < 1) under the untruncated normal, by plain Monte Carlo.
    let p = table_ptmvn(1.0);
    let mut r = rng(10);
    let n = 1_000_000;
    let (mu_w, sd_w) = (p.mu()[0], p.sd_omega());
    let hits = (0..n)
        .filter(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            let w = mu_w + sd_w * z;
            0.0 < w && w < 1.0
        })
        .count();
    let phat = hits as f64 / n as f64;
    let se = (phat * (1.0 - phat) / n as f64).sqrt();
    let mu = p.mu().as_slice().to_vec();
    let untruncated = mvn_logpdf(p.mu(), p.mu(), p.sigma());
    // ptmvn_logpdf(μ) = log N(μ | μ, Σ) − log P(0 < ω < 1).
    let implied = (untruncated - ptmvn_logpdf(&mu, &p)).exp();
    assert!(
        (implied - phat).abs() < 3.0 * se,
        "{implied} vs {phat} ± {se}"
    );
}

#[test]
fn conditional_b_matches_rejection_oracle() {
    let p = table_ptmvn(INF);
    let l = p.sigma().clone().cholesky().unwrap().l();
    let mu = p.mu();
    let mut r = rng(12);
    let mut kept: Vec<DVector<f64>> = Vec::new();
    // Unconstrained joint draws; b is only formed near ω = 1.2.
    for _ in 0..20_000_000u32 {
        let z0: f64 = StandardNormal.sample(&mut r);
        let omega = mu[0] + l[(0, 0)] * z0;
        if (omega - 1.2).abs() > 0.001 {
            continue;
        }
        let mut z = DVector::from_element(4, z0);
        for k in 1..4 {
            z[k] = StandardNormal.sample(&mut r);
        }
        let x = mu + &l * z;
        kept.push(x.rows(1, 3).into_owned());
    }
    let n = kept.len() as f64;
    assert!(n > 5000.0);
    let mean = kept.iter().fold(DVector::zeros(3), |a, b| a + b) / n;
    let cov = kept.iter().fold(DMatrix::zeros(3, 3), |a, b| {
        a + (b - &mean) * (b - &mean).transpose()
    }) / (n - 1.0);
    let cond = cond_b_given_omega(1.2, &p).unwrap();
    for i in 0..3 {
        let se = (cond.cov[(i, i)] / n).sqrt();
        assert!((mean[i] - cond.mean[i]).abs() < 4.0 * se, "mean {i}");
        for j in 0..3 {
            let c = &cond.cov;
            let se = ((c[(i, i)] * c[(j, j)] + c[(i, j)].powi(2)) / n).sqrt();
            assert!((cov[(i, j)] - c[(i, j)]).abs() < 4.0 * se, "cov ({i},{j})");
        }
    }
}

#[test]
fn conditional_omega_matches_joint_density() {
    // Moments of ω | b from quadrature of the joint density over ω.
    let p = table_ptmvn(1.5);
    let b = [-0.3, -0.1, 0.8];
    let f = |w: f64, k: i32| w.powi(k) * ptmvn_logpdf(&[w, b[0], b[1], b[2]], &p).exp();
    let z = integrate(|w| f(w, 0), 0.0, 1.5, 1e-15).unwrap();
    let m1 = integrate(|w| f(w, 1), 0.0, 1.5, 1e-15).unwrap() / z;
    let m2 = integrate(|w| f(w, 2), 0.0, 1.5, 1e-15).unwrap() / z;
    let tn = cond_omega_given_b(&b, &p).unwrap();
    assert_eq!((tn.a, tn.b), (0.0, 1.5));
    assert!((tn_moment(1, &tn) - m1).abs() < 1e-9);
    assert!((tn_moment(2, &tn) - m2).abs() < 1e-9);
}

#[test]
fn sampler_mean_and_mgf_match_closed_forms() {
    let p = table_ptmvn(1.0);
    let mut r = rng(13);
    let n = 1_000_000;
    let mut sum = DVector::<f64>::zeros(4);
    let mut sum_sq = DVector::<f64>::zeros(4);
    let (mut e, mut e2) = (0.0, 0.0);
    for _ in 0..n {
        let x = DVector::from_vec(ptmvn_sample(&mut r, &p));
        assert!(0.0 < x[0] && x[0] < 1.0);
        let m = (0.1 * x[0]).exp();
        e += m;
        e2 += m * m;
        sum_sq += x.component_mul(&x);
        sum += x;
    }
    let nf = n as f64;
    let mean = &sum / nf;
    let expect = ptmvn_mean(&p);
    for k in 0..4 {
        let se = ((sum_sq[k] / nf - mean[k] * mean[k]) / nf).sqrt();
        assert!((mean[k] - expect[k]).abs() < 4.0 * se, "coordinate {k}");
    }
    let mgf = ptmvn_mgf(&[0.1, 0.0, 0.0, 0.0], &p).unwrap();
    let se = ((e2 / nf - (e / nf).powi(2)) / nf).sqrt();
    assert!((e / nf - mgf).abs() < 4.0 * se);
}

#[test]
fn mean_first_coordinate_is_truncated_normal_mean() {
    let mut r = rng(14);
    for _ in 0..20 {
        let q = r.random_range(1..=4);
        let p = PtmvnParams::new(
            (0..q).map(|_| r.random_range(-1.0..1.0)).collect(),
            random_sigma(&mut r, q),
            r.random_range(-1.0..0.0),
            r.random_range(0.1..2.0),
        )
        .unwrap();
        assert!((ptmvn_mean(&p)[0] - tn_moment(1, &p.omega_marginal())).abs() < 1e-12);
    }
    let half = PtmvnParams::new(vec![0.0], DMatrix::from_element(1, 1, 1.0), 0.0, INF).unwrap();
    assert!((ptmvn_mean(&half)[0] - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-14);
}

#[test]
fn mgf_gradient_at_zero_is_mean() {
    let mut r = rng(15);
    for _ in 0..20 {
        let q = r.random_range(1..=4);
        let l = r.random_range(-1.0..0.5);
        let p = PtmvnParams::new(
            (0..q).map(|_| r.random_range(-1.0..1.0)).collect(),
            random_sigma(&mut r, q),
            l,
            if r.random_bool(0.3) {
                INF
            } else {
                l + r.random_range(0.3..2.0)
            },
        )
        .unwrap();
        let mean = ptmvn_mean(&p);
        let h = 1e-5;
        for k in 0..q {
            let mut t = vec![0.0; q];
            t[k] = h;
            let up = ptmvn_mgf(&t, &p).unwrap();
            t[k] = -h;
            let down = ptmvn_mgf(&t, &p).unwrap();
            let fd = (up - down) / (2.0 * h);
            let scale = mean[k].abs().max(p.sigma()[(k, k)].sqrt());
            assert!(
                (fd - mean[k]).abs() <= 1e-5 * scale,
                "k={k}: {fd} vs {}",
                mean[k]
            );
        }
    }
}

#[test]
fn partial_moment_matches_monte_carlo() {
    let tn = TruncNormParams::new(0.9, 0.15, 0.0, 1.2).unwrap();
    let mut r = rng(16);
    let n = 10_000_000;
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let w = tn_sample(&mut r, &tn);
        let v = if 0.5 <= w { 0.5 - w } else { 0.0 };
        s1 += v;
        s2 += v * v;
    }
    let mean = s1 / n as f64;
    let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
    let exact = partial_moment(0, 1, 0.5, -INF, 0.0, &tn);
    assert!((exact - mean).abs() < 4.0 * se, "{exact} vs {mean} ± {se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn partial_moments_split_at_zero(
        mu in -1.0..2.0f64,
        sigma in 0.05..1.0f64,
        upper in 0.2..3.0f64,
        s in -0.5..3.5f64,
        m in 0u32..3,
        k in 0u32..4,
    ) {
        let tn = TruncNormParams::new(mu, sigma, 0.0, upper).unwrap();
        let left = partial_moment(m, k, s, -INF, 0.0, &tn);
        let right = partial_moment(m, k, s, 0.0, INF, &tn);
        // E[ω^m Δ^k] via the binomial expansion over all moments.
        let mut whole = 0.0;
        let mut scale = 0.0;
        let mut binom = 1.0;
        for l in 0..=k {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            let term = binom * s.powi((k - l) as i32) * tn_moment(m + l, &tn);
            whole += sign * term;
            scale += term.abs();
            binom *= (k - l) as f64 / (l + 1) as f64;
        }
        prop_assert!((left + right - whole).abs() <= 1e-9 * scale.max(1e-300));
    }
}

#[test]
fn monte_carlo_covariance_of_omega() {
    let p = table_ptmvn(1.0);
    let tn = p.omega_marginal();
    let m1 = tn_moment(1, &tn);
    let var = tn_moment(2, &tn) - m1 * m1;
    let n = 200_000;
    let cov = ptmvn_cov_mc(&mut rng(17), &p, n);
    // SE of a sample variance, using the fourth central moment.
    let m4 = {
        let m: Vec<f64> = (0..=4).map(|k| tn_moment(k, &tn)).collect();
        m[4] - 4.0 * m1 * m[3] + 6.0 * m1 * m1 * m[2] - 3.0 * m1.powi(4)
    };
    let se = ((m4 - var * var) / n as f64).sqrt();
    assert!((cov[(0, 0)] - var).abs() < 4.0 * se);
    let s = cov.clone().symmetric_eigen();
    assert!(s.eigenvalues.min() > 0.0);
}
