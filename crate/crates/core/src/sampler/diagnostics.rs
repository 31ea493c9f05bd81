//! Convergence diagnostics computed from per-chain draw sequences.

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is cut into two halves (the middle draw is dropped for odd
/// lengths). When every half has zero variance the result is 1.0 if all
/// halves share the same value and `+∞` otherwise.
pub fn split_rhat(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::InsufficientDraws(format!(
            "R-hat needs at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n_min = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n_min < 50 {
        return Err(Error::InsufficientDraws(format!(
            "R-hat needs at least 50 draws per chain, got {n_min}"
        )));
    }
    let half = n_min / 2;
    let mut parts: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        let c = &c[..n_min];
        parts.push(&c[..half]);
        parts.push(&c[n_min - half..]);
    }
    let n = half as f64;
    let means: Vec<f64> = parts.iter().map(|p| mean(p)).collect();
    let w = parts.iter().map(|p| sample_var(p)).sum::<f64>() / parts.len() as f64;
    let b_over_n = sample_var(&means);
    if w <= 0.0 {
        return Ok(if b_over_n <= 0.0 { 1.0 } else { f64::INFINITY });
    }
    let var_plus = (n - 1.0) / n * w + b_over_n;
    Ok((var_plus / w).sqrt())
}

/// Multi-chain effective sample size with Geyer's initial positive and
/// initial monotone sequence truncation of the autocorrelation sum.
///
/// Chains are truncated to the shortest length. The result is clipped to the
/// total number of draws; a constant input gives 0.
pub fn ess_chains(chains: &[Vec<f64>]) -> Result<f64> {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || m * n < 100 || n < 4 {
        return Err(Error::InsufficientDraws(format!(
            "ESS needs at least 100 draws, got {} chains × {n}",
            m
        )));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let nf = n as f64;
    // Biased autocovariance at `lag`, averaged over chains.
    let acov = |lag: usize| -> f64 {
        chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| {
                (0..n - lag)
                    .map(|t| (c[t] - mu) * (c[t + lag] - mu))
                    .sum::<f64>()
                    / nf
            })
            .sum::<f64>()
            / m as f64
    };
    let acov0 = acov(0);
    let mean_var = acov0 * nf / (nf - 1.0);
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        var_plus += sample_var(&means);
    }
    if !(var_plus > 0.0) || !var_plus.is_finite() {
        return Ok(0.0);
    }
    let rho_at = |lag: usize| 1.0 - (mean_var - acov(lag)) / var_plus;
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut rho_even = 1.0;
    let mut rho_odd = rho_at(1);
    rho[1] = rho_odd;
    let mut t = 1;
    while t + 5 < n && rho_even + rho_odd > 0.0 {
        rho_even = rho_at(t + 1);
        rho_odd = rho_at(t + 2);
        if rho_even + rho_odd >= 0.0 {
            rho[t + 1] = rho_even;
            rho[t + 2] = rho_odd;
        }
        t += 2;
    }
    let max_t = t;
    if rho_even > 0.0 && max_t + 1 < n {
        rho[max_t + 1] = rho_even;
    }
    let mut t = 1;
    while t + 2 <= max_t {
        let prev = rho[t - 1] + rho[t];
        if rho[t + 1] + rho[t + 2] > prev {
            rho[t + 1] = prev / 2.0;
            rho[t + 2] = prev / 2.0;
        }
        t += 2;
    }
    let total = (m * n) as f64;
    let next = if max_t + 1 < n { rho[max_t + 1] } else { 0.0 };
    let tau =
        (-1.0 + 2.0 * rho[..max_t.min(n)].iter().sum::<f64>() + next).max(1.0 / total.log10());
    Ok((total / tau).min(total))
}
