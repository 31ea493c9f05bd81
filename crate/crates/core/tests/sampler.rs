mod common;

use common::{default_post, rng, simulated};
use cpjoint::fit::fit_posterior;
use cpjoint::model::{JointPosterior, ModelKind, PriorConfig};
use cpjoint::sampler::{
    ess, ess_chains, initialize, rhat, sample, split_rhat, Algorithm, PosteriorDraws,
    SamplerConfig, Target,
};
use cpjoint::truncnorm::std_normal_cdf;
use cpjoint::Result;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

/// Gaussian `N(μ, Σ)` given by its precision matrix.
struct Gaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl Gaussian {
    fn diagonal(mean: Vec<f64>, var: &[f64]) -> Self {
        Self {
            mean: DVector::from_vec(mean),
            precision: DMatrix::from_diagonal(&DVector::from_iterator(
                var.len(),
                var.iter().map(|v| 1.0 / v),
            )),
        }
    }

    fn from_cov(mean: Vec<f64>, cov: DMatrix<f64>) -> Self {
        Self {
            mean: DVector::from_vec(mean),
            precision: cov.try_inverse().unwrap(),
        }
    }
}

impl Target for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density_grad(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = DVector::from_column_slice(x) - &self.mean;
        let g = -(&self.precision * &d);
        grad.copy_from_slice(g.as_slice());
        Ok(0.5 * d.dot(&g))
    }
}

fn moments(draws: &PosteriorDraws, k: usize) -> (f64, f64) {
    let x = draws.pooled(k);
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn config(seed: u64) -> SamplerConfig {
    SamplerConfig {
        seed,
        ..SamplerConfig::default()
    }
}

#[test]
fn standard_normal_in_ten_dimensions() {
    let target = Gaussian::diagonal(vec![0.0; 10], &[1.0; 10]);
    let draws = sample(&target, &[0.5; 10], &config(3)).unwrap();
    assert_eq!((draws.n_chains(), draws.n_samples()), (4, 1000));
    for k in 0..10 {
        let (mean, var) = moments(&draws, k);
        assert!(mean.abs() <= 0.05, "x[{k}] mean {mean}");
        assert!((var - 1.0).abs() <= 0.1, "x[{k}] var {var}");
    }
    // 4000 transitions on a well-conditioned target: no divergences.
    assert_eq!(draws.total_divergences(), 0);
}

#[test]
fn ill_conditioned_gaussian() {
    // Variances log-spaced over two decades (condition number 100),
    // with nonzero means. Tolerances apply on the standardized scale.
    let var: Vec<f64> = (0..10)
        .map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / 9.0))
        .collect();
    let mean: Vec<f64> = (0..10).map(|k| k as f64 - 4.5).collect();
    let target = Gaussian::diagonal(mean.clone(), &var);
    let draws = sample(&target, &[0.0; 10], &config(5)).unwrap();
    for k in 0..10 {
        let (m, v) = moments(&draws, k);
        let sd = var[k].sqrt();
        assert!(((m - mean[k]) / sd).abs() <= 0.05, "x[{k}] mean {m}");
        assert!((v / var[k] - 1.0).abs() <= 0.1, "x[{k}] var {v}");
    }
}

#[test]
fn correlated_gaussian_covariance() {
    // Dense covariance with eigenvalues 0.1..10 in a random basis.
    let mut r = rng(6);
    let d = 5;
    let a = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(&mut r));
    let q = a.qr().q();
    let eig = DVector::from_iterator(d, (0..d).map(|k| 10f64.powf(-1.0 + 2.0 * k as f64 / 4.0)));
    let cov = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let target = Gaussian::from_cov(vec![0.0; d], cov.clone());
    let cfg = SamplerConfig {
        samples: 4000,
        ..config(7)
    };
    let draws = sample(&target, &[0.0; 5], &cfg).unwrap();
    let n = (draws.n_chains() * draws.n_samples()) as f64;
    let xs: Vec<Vec<f64>> = (0..d).map(|k| draws.pooled(k)).collect();
    for i in 0..d {
        for j in 0..d {
            let c = xs[i].iter().zip(&xs[j]).map(|(a, b)| a * b).sum::<f64>() / n;
            let scale = (cov[(i, i)] * cov[(j, j)]).sqrt();
            assert!(
                (c - cov[(i, j)]).abs() <= 0.1 * scale,
                "({i},{j}): {c} vs {}",
                cov[(i, j)]
            );
        }
    }
}

#[test]
fn identical_seeds_give_identical_draws() {
    let target = Gaussian::diagonal(vec![1.0, -1.0, 0.0], &[1.0, 4.0, 0.25]);
    let cfg = SamplerConfig {
        warmup: 200,
        samples: 200,
        ..config(42)
    };
    let a = sample(&target, &[0.0; 3], &cfg).unwrap();
    let b = sample(&target, &[0.0; 3], &cfg).unwrap();
    assert_eq!(a, b);
    let c = sample(&target, &[0.0; 3], &SamplerConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a, c);
}

/// Kolmogorov–Smirnov distance of `xs` from `N(mean, sd²)`.
fn ks_normal(mut xs: Vec<f64>, mean: f64, sd: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = std_normal_cdf((x - mean) / sd).unwrap();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn two_dimensional_gaussian_passes_ks() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
    let target = Gaussian::from_cov(vec![0.5, -1.0], cov.clone());
    let cfg = SamplerConfig {
        samples: 5000,
        ..config(11)
    };
    let draws = sample(&target, &[0.0, 0.0], &cfg).unwrap();
    // Thinned to keep the draws close to independent.
    for (k, mean) in [(0, 0.5), (1, -1.0)] {
        let xs: Vec<f64> = draws.pooled(k).into_iter().step_by(5).collect();
        let crit = 1.628 / (xs.len() as f64).sqrt();
        let d = ks_normal(xs, mean, cov[(k, k)].sqrt());
        assert!(d < crit, "x[{k}]: D = {d} >= {crit}");
    }
}

#[test]
fn static_hmc_recovers_standard_normal() {
    let target = Gaussian::diagonal(vec![0.0; 4], &[1.0; 4]);
    let cfg = SamplerConfig {
        algorithm: Algorithm::StaticHmc { steps: 10 },
        ..config(9)
    };
    let draws = sample(&target, &[1.0; 4], &cfg).unwrap();
    for k in 0..4 {
        let (mean, var) = moments(&draws, k);
        assert!(mean.abs() <= 0.1, "x[{k}] mean {mean}");
        assert!((var - 1.0).abs() <= 0.15, "x[{k}] var {var}");
    }
}

#[test]
fn fixed_step_size_without_adaptation() {
    let target = Gaussian::diagonal(vec![0.0; 2], &[1.0; 2]);
    let cfg = SamplerConfig {
        adapt: false,
        warmup: 0,
        step_size: 0.4,
        ..config(2)
    };
    let draws = sample(&target, &[0.0; 2], &cfg).unwrap();
    assert!(draws.diagnostics.iter().all(|d| d.step_size == 0.4));
}

#[test]
fn config_validation() {
    let bad = [
        SamplerConfig {
            chains: 0,
            ..config(1)
        },
        SamplerConfig {
            samples: 0,
            ..config(1)
        },
        SamplerConfig {
            warmup: 99,
            ..config(1)
        },
        SamplerConfig {
            target_accept: 1.0,
            ..config(1)
        },
        SamplerConfig {
            max_tree_depth: 0,
            ..config(1)
        },
        SamplerConfig {
            algorithm: Algorithm::StaticHmc { steps: 0 },
            ..config(1)
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
    assert!(SamplerConfig {
        warmup: 10,
        adapt: false,
        ..config(1)
    }
    .validate()
    .is_ok());
}

#[test]
fn non_finite_start_is_an_error() {
    struct Nowhere;
    impl Target for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_grad(&self, _: &[f64], grad: &mut [f64]) -> Result<f64> {
            grad[0] = 0.0;
            Ok(f64::NEG_INFINITY)
        }
    }
    assert!(sample(&Nowhere, &[0.0], &config(1)).is_err());
}

fn iid_chains(seed: u64, chains: usize, n: usize, shift: impl Fn(usize) -> f64) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..chains)
        .map(|c| {
            (0..n)
                .map(|_| shift(c) + Distribution::<f64>::sample(&StandardNormal, &mut r))
                .collect()
        })
        .collect()
}

#[test]
fn rhat_synthetic_oracles() {
    let iid = iid_chains(1, 4, 1000, |_| 0.0);
    let r = split_rhat(&iid).unwrap();
    assert!((0.99..=1.01).contains(&r), "{r}");
    let shifted = iid_chains(2, 4, 1000, |c| if c % 2 == 0 { 3.0 } else { -3.0 });
    assert!(split_rhat(&shifted).unwrap() > 1.5);
    assert_eq!(split_rhat(&vec![vec![2.0; 100]; 4]).unwrap(), 1.0);
    assert!(split_rhat(&iid_chains(3, 1, 1000, |_| 0.0)).is_err());
    assert!(split_rhat(&iid_chains(3, 4, 49, |_| 0.0)).is_err());
}

#[test]
fn ess_synthetic_oracles() {
    let iid = iid_chains(4, 4, 1000, |_| 0.0);
    let e = ess_chains(&iid).unwrap();
    assert!((3200.0..=4800.0).contains(&e), "{e}");

    let phi: f64 = 0.9;
    let mut r = rng(5);
    let ar: Vec<Vec<f64>> = (0..4)
        .map(|_| {
            let mut x: f64 = StandardNormal.sample(&mut r);
            x /= (1.0 - phi * phi).sqrt();
            (0..10_000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    x = phi * x + e;
                    x
                })
                .collect()
        })
        .collect();
    let expect = 40_000.0 * (1.0 - phi) / (1.0 + phi);
    let e = ess_chains(&ar).unwrap();
    assert!((e / expect - 1.0).abs() <= 0.3, "{e} vs {expect}");

    assert_eq!(ess_chains(&vec![vec![1.0; 100]; 2]).unwrap(), 0.0);
    assert!(ess_chains(&[vec![0.0; 99]]).is_err());
}

#[test]
fn draw_accessors_by_name() {
    let target = Gaussian::diagonal(vec![0.0; 2], &[1.0; 2]);
    let cfg = SamplerConfig {
        warmup: 100,
        samples: 100,
        ..config(8)
    };
    let draws = sample(&target, &[0.0; 2], &cfg).unwrap();
    assert_eq!(draws.names(), ["x[1]", "x[2]"]);
    assert!(rhat(&draws, "x[2]").unwrap().is_finite());
    assert!(ess(&draws, "x[1]").unwrap() > 0.0);
    assert!(rhat(&draws, "nope").is_err());
}

fn is_correlation_matrix(c: &DMatrix<f64>) -> bool {
    let sym = (0..4).all(|i| (0..4).all(|j| (c[(i, j)] - c[(j, i)]).abs() < 1e-12));
    let unit = (0..4).all(|i| (c[(i, i)] - 1.0).abs() < 1e-12);
    sym && unit && c.clone().cholesky().is_some()
}

#[test]
fn model_draws_respect_constraints() {
    let data = simulated(30, 0.6, 17);
    let post = JointPosterior::new(data, PriorConfig::default(), ModelKind::Joint)
        .unwrap()
        .with_latent_output(true);
    let cfg = SamplerConfig {
        chains: 2,
        warmup: 150,
        samples: 100,
        ..config(4)
    };
    let draws = fit_posterior(&post, &cfg).unwrap();
    let idx = |n: &str| draws.index_of(n).unwrap();
    let positive = [
        "eta",
        "alpha",
        "sigma_y",
        "sigma_omega",
        "sigma_b0",
        "sigma_b1",
        "sigma_b2",
    ];
    let re = ["omega", "b0", "b1", "b2"];
    for c in 0..draws.n_chains() {
        for it in 0..draws.n_samples() {
            let row = draws.row(c, it);
            assert!(row.iter().all(|v| v.is_finite()));
            assert!(positive.iter().all(|n| row[idx(n)] > 0.0));
            let mut corr = DMatrix::identity(4, 4);
            for i in 1..4 {
                for j in 0..i {
                    let v = row[idx(&format!("corr_{}_{}", re[j], re[i]))];
                    corr[(i, j)] = v;
                    corr[(j, i)] = v;
                }
            }
            assert!(is_correlation_matrix(&corr));
            for s in post.data().subjects() {
                let omega = row[idx(&format!("omega[{}]", s.id))];
                let t_star = row[idx(&format!("t_star[{}]", s.id))];
                assert!(0.0 < omega && omega < t_star);
                if s.event {
                    assert_eq!(t_star, s.t_obs);
                } else {
                    assert!(t_star > s.t_obs);
                }
            }
        }
    }
}

#[test]
fn initialization_is_finite_and_seeded() {
    let post = default_post(simulated(40, 0.5, 2), ModelKind::Joint);
    let cfg = SamplerConfig::default();
    let a = initialize(&post, &mut rng(5), &cfg).unwrap();
    let b = initialize(&post, &mut rng(5), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(post.log_posterior(&a).unwrap().is_finite());
    let c = initialize(&post, &mut rng(6), &cfg).unwrap();
    assert_ne!(a, c);
}
