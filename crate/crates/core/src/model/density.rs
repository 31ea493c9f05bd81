use crate::error::{invalid, Result};
use crate::truncnorm::LN_SQRT_2PI;

use super::data::SubjectRecord;

/// Piecewise-linear mean at visit time `s` with change point `omega`.
///
/// `s == omega` falls on the pre-change branch; both branches are zero there.
#[inline]
pub fn piecewise_mean(x_row: &[f64], beta: &[f64], s: f64, omega: f64, b: &[f64; 3]) -> f64 {
    let fixed: f64 = x_row.iter().zip(beta).map(|(x, c)| x * c).sum();
    let delta = s - omega;
    let slope = if delta <= 0.0 { b[1] } else { b[2] };
    fixed + b[0] + slope * delta
}

/// `Σ_j log N(y_ij | mean_ij, σ_y²)`.
pub fn longitudinal_loglik(
    subject: &SubjectRecord,
    omega: f64,
    b: &[f64; 3],
    beta: &[f64],
    sigma_y: f64,
) -> f64 {
    let log_sigma = sigma_y.ln();
    let inv_var = 1.0 / (sigma_y * sigma_y);
    subject
        .s
        .iter()
        .zip(&subject.y)
        .zip(&subject.x)
        .map(|((&s, &y), x)| {
            let e = y - piecewise_mean(x, beta, s, omega, b);
            -LN_SQRT_2PI - log_sigma - 0.5 * e * e * inv_var
        })
        .sum()
}

/// Log density of the Weibull proportional-hazards model,
/// `log η + log α + (α−1) log t + w′γ − η t^α e^{w′γ}`.
pub fn weibull_ph_logpdf(t: f64, w: &[f64], gamma: &[f64], eta: f64, alpha: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid(
            "t",
            format!("event time must be positive, got {t}"),
        ));
    }
    let lp: f64 = w.iter().zip(gamma).map(|(a, b)| a * b).sum();
    Ok(eta.ln() + alpha.ln() + (alpha - 1.0) * t.ln() + lp - eta * t.powf(alpha) * lp.exp())
}

/// Log survival `−η t^α e^{w′γ}`.
pub fn weibull_ph_logsurv(t: f64, w: &[f64], gamma: &[f64], eta: f64, alpha: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let lp: f64 = w.iter().zip(gamma).map(|(a, b)| a * b).sum();
    -eta * t.powf(alpha) * lp.exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::integrate;

    fn one_visit(y: f64) -> SubjectRecord {
        SubjectRecord {
            id: "s".into(),
            x: vec![vec![1.0]],
            w: vec![],
            s: vec![0.3],
            y: vec![y],
            t_obs: 1.0,
            event: true,
        }
    }

    #[test]
    fn exact_fit_gives_normalizer() {
        let b = [0.1, -0.5, 0.6];
        let beta = [0.2];
        let mean = piecewise_mean(&[1.0], &beta, 0.3, 0.5, &b);
        let ll = longitudinal_loglik(&one_visit(mean), 0.5, &b, &beta, 0.08);
        assert!((ll + (0.08 * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-14);
    }

    #[test]
    fn late_change_point_is_single_line() {
        let b = [0.1, -0.5, 0.6];
        for &s in &[0.0, 0.2, 0.9] {
            let m = piecewise_mean(&[], &[], s, 1.0, &b);
            assert!((m - (0.1 - 0.5 * (s - 1.0))).abs() < 1e-15);
        }
    }

    #[test]
    fn weibull_unit_exponential() {
        assert!((weibull_ph_logpdf(1.0, &[1.0], &[0.0], 1.0, 1.0).unwrap() + 1.0).abs() < 1e-15);
        assert!(weibull_ph_logpdf(0.0, &[], &[], 1.0, 1.0).is_err());
        assert_eq!(weibull_ph_logsurv(0.0, &[1.0], &[0.18], 3.76, 1.88), 0.0);
        assert!((weibull_ph_logsurv(2.0, &[], &[], 1.0, 1.0) + 2.0).abs() < 1e-15);
    }

    #[test]
    fn weibull_density_integrates_to_one() {
        // w′γ = 0.18 with Weibull scale 3.76 and shape 1.88.
        let f = |t: f64| {
            if t <= 0.0 {
                0.0
            } else {
                weibull_ph_logpdf(t, &[1.0], &[0.18], 3.76, 1.88)
                    .unwrap()
                    .exp()
            }
        };
        let total = integrate(f, 0.0, f64::INFINITY, 1e-13).unwrap();
        assert!((total - 1.0).abs() < 1e-10);
        for &t in &[0.1, 0.5, 1.0, 2.0] {
            let tail = integrate(f, t, f64::INFINITY, 1e-14).unwrap();
            let s = weibull_ph_logsurv(t, &[1.0], &[0.18], 3.76, 1.88).exp();
            assert!((tail - s).abs() < 1e-8, "t={t}: {tail} vs {s}");
        }
    }
}
