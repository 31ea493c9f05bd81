#![allow(dead_code)]

use cpjoint::model::{
    cholesky_lower, corr_cholesky_from_unconstrained, longitudinal_loglik, weibull_ph_logpdf,
    Dataset, JointPosterior, ModelKind, ModelParams, PriorConfig, N_RE,
};
use cpjoint::ptmvn::ptmvn_logpdf;
use cpjoint::ptmvn::PtmvnParams;
use cpjoint::sim::{generate_dataset, SimScenario};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Reference-truth dataset with a fixed exponential censoring rate.
pub fn simulated(n: usize, censor_rate: f64, seed: u64) -> Dataset {
    let scn = SimScenario {
        n,
        ..SimScenario::default()
    };
    generate_dataset(&scn, censor_rate, &mut rng(seed)).unwrap()
}

/// Log posterior assembled from raw densities after decoding, without the
/// reduced random-effects algebra: Weibull density + PTMVN density of
/// `(ω, b)` + outcome likelihood + priors + log Jacobians computed directly.
pub fn direct_log_posterior(post: &JointPosterior, theta: &[f64]) -> f64 {
    let d = post.decode(theta).unwrap();
    let p = &d.params;
    let l = post.layout();
    let priors = post.priors();
    let joint = post.kind() == ModelKind::Joint;
    let mut total = if joint {
        priors.log_prior(p).unwrap()
    } else {
        priors.log_prior_longitudinal(p).unwrap()
    };
    // Jacobians of the global block.
    total += p.sigma_y.ln() + p.sd_r.iter().map(|v| v.ln()).sum::<f64>();
    if joint {
        total += p.eta.ln() + p.alpha.ln();
    }
    total += corr_cholesky_from_unconstrained(&theta[l.corr..l.corr + 6]).1;
    let big_l = cholesky_lower(&p.sigma_r()).unwrap();
    let log_det_l22: f64 = (1..N_RE).map(|k| big_l[k][k].ln()).sum();
    for (i, (s, lat)) in post.data().subjects().iter().zip(&d.subjects).enumerate() {
        let r = [lat.omega, lat.b[0], lat.b[1], lat.b[2]];
        total += longitudinal_loglik(s, lat.omega, &lat.b, &p.beta, p.sigma_y);
        total += log_det_l22;
        if joint {
            total += weibull_ph_logpdf(lat.t_star, &s.w, &p.gamma, p.eta, p.alpha).unwrap();
            total += ptmvn_logpdf(&r, &p.ptmvn(lat.t_star).unwrap());
            let frac = lat.omega / lat.t_star;
            total += (lat.t_star * frac * (1.0 - frac)).ln();
            if l.z_t_index(i).is_some() {
                total += (lat.t_star - s.t_obs).ln();
            }
        } else {
            let unbounded = p.ptmvn_bounded(f64::NEG_INFINITY, f64::INFINITY).unwrap();
            total += ptmvn_logpdf(&r, &unbounded);
            total += p.sd_r[0].ln();
        }
    }
    total
}

/// Perturbed encoding of the generating truth with random latent states.
pub fn random_point(post: &JointPosterior, rng: &mut ChaCha8Rng, scale: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut truth = ModelParams::reference_truth();
    truth.beta.resize(post.layout().p_x, -0.01);
    truth.gamma.resize(post.layout().p_w, 0.18);
    let mut theta = post.initial_point(rng, 1.0);
    let anchor = post
        .encode(&truth, &post.decode(&theta).unwrap().subjects)
        .unwrap();
    let n_global = post.layout().n_global();
    for k in 0..n_global {
        let e: f64 = StandardNormal.sample(rng);
        theta[k] = anchor[k] + scale * e;
    }
    theta
}

pub fn default_post(data: Dataset, kind: ModelKind) -> JointPosterior {
    JointPosterior::new(data, PriorConfig::default(), kind).unwrap()
}

/// Reference-truth random-effects law with ω truncated to `(0, upper)`.
pub fn table_ptmvn(upper: f64) -> PtmvnParams {
    ModelParams::reference_truth().ptmvn(upper).unwrap()
}

/// Random `q × q` covariance `A A′ + 0.1 I` with entries of `A` uniform on (−1, 1).
pub fn random_sigma<R: Rng>(rng: &mut R, q: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(q, q, |_, _| rng.random_range(-1.0..1.0));
    let s = &a * a.transpose() + DMatrix::identity(q, q) * 0.1;
    (&s + s.transpose()) * 0.5
}
