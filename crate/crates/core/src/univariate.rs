//! Conjugate Normal-Gamma model for one athlete and one marker on the log
//! scale: y_i ~ N(mu, 1/tau) with mu | tau ~ N(mu0, 1/(kappa0·tau)) and
//! tau ~ Gamma(alpha0, beta0). The posterior stays Normal-Gamma with
//! closed-form updates, so the "chain" is just iid joint draws; adaptive
//! reference limits come from the HPD interval of posterior-predictive
//! replicates.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpd::{hpd_interval, Interval};
use crate::rng::ChainRng;
use crate::sampling::sample_gamma;

/// Prior or posterior state of the Normal-Gamma pair (mu, kappa, alpha, beta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalGamma {
    /// Mean of the Gaussian conditional on the precision.
    pub mu: f64,
    /// Prior sample size; controls how tightly mu concentrates.
    pub kappa: f64,
    /// Gamma shape for the precision.
    pub alpha: f64,
    /// Gamma rate for the precision.
    pub beta: f64,
}

impl NormalGamma {
    pub fn new(mu: f64, kappa: f64, alpha: f64, beta: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(alpha > 0.0) || !(beta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "NormalGamma requires kappa, alpha, beta > 0, got ({kappa}, {alpha}, {beta})"
            )));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("non-finite mu {mu}")));
        }
        Ok(NormalGamma { mu, kappa, alpha, beta })
    }
}

/// Settings for the univariate fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateConfig {
    pub kappa0: f64,
    pub alpha0: f64,
    pub beta0: f64,
    /// Posterior draws retained per fit.
    pub n_draws: usize,
    /// Draws discarded up front. The joint posterior is sampled iid, so this
    /// is a no-op kept for interface parity with the Gibbs chain.
    pub burn_in: usize,
    /// Significance level of the predictive HPD limits.
    pub alpha_level: f64,
}

impl Default for UnivariateConfig {
    fn default() -> Self {
        UnivariateConfig {
            kappa0: 1.0,
            alpha0: 10.0,
            beta0: 1.0,
            n_draws: 5000,
            burn_in: 1000,
            alpha_level: 0.05,
        }
    }
}

impl UnivariateConfig {
    /// The prior for a given log-scale baseline mean.
    pub fn prior(&self, mu0: f64) -> Result<NormalGamma> {
        NormalGamma::new(mu0, self.kappa0, self.alpha0, self.beta0)
    }
}

/// Closed-form conjugate update after observing `data` (log scale).
///
/// kappa_n = kappa0 + n
/// mu_n    = (kappa0·mu0 + n·ybar) / kappa_n
/// alpha_n = alpha0 + n/2
/// beta_n  = beta0 + 0.5·sum (y_i − ybar)² + kappa0·n/(2·kappa_n)·(ybar − mu0)²
pub fn posterior_update(prior: &NormalGamma, data: &[f64]) -> NormalGamma {
    let n = data.len();
    if n == 0 {
        return *prior;
    }
    let nf = n as f64;
    let ybar = data.iter().sum::<f64>() / nf;
    let scatter: f64 = data.iter().map(|y| (y - ybar) * (y - ybar)).sum();
    let kappa_n = prior.kappa + nf;
    NormalGamma {
        mu: (prior.kappa * prior.mu + nf * ybar) / kappa_n,
        kappa: kappa_n,
        alpha: prior.alpha + nf / 2.0,
        beta: prior.beta
            + 0.5 * scatter
            + prior.kappa * nf / (2.0 * kappa_n) * (ybar - prior.mu) * (ybar - prior.mu),
    }
}

/// One joint draw (mu_t, tau_t) from the Normal-Gamma.
fn draw_pair(params: &NormalGamma, rng: &mut ChainRng) -> (f64, f64) {
    let tau = sample_gamma(params.alpha, params.beta, rng)
        .expect("valid NormalGamma implies valid Gamma");
    let sd = (1.0 / (params.kappa * tau)).sqrt();
    let mu = Normal::new(params.mu, sd).expect("finite sd").sample(rng);
    (mu, tau)
}

/// Draw `n_draws` posterior pairs after discarding `burn_in` (iid draws, so
/// the discard exists only for parity with the multivariate chain).
pub fn sample_posterior(
    params: &NormalGamma,
    n_draws: usize,
    burn_in: usize,
    rng: &mut ChainRng,
) -> Vec<(f64, f64)> {
    for _ in 0..burn_in {
        draw_pair(params, rng);
    }
    (0..n_draws).map(|_| draw_pair(params, rng)).collect()
}

/// Monte Carlo posterior-predictive density at `y_new`:
/// (1/T)·sum sqrt(tau_t/2π)·exp(−tau_t/2·(y_new − mu_t)²).
pub fn predictive_density(draws: &[(f64, f64)], y_new: f64) -> f64 {
    assert!(!draws.is_empty(), "predictive density needs at least one draw");
    let total: f64 = draws
        .iter()
        .map(|&(mu, tau)| {
            (tau / (2.0 * std::f64::consts::PI)).sqrt()
                * (-0.5 * tau * (y_new - mu) * (y_new - mu)).exp()
        })
        .sum();
    total / draws.len() as f64
}

/// Minimum posterior draws required before predictive limits are computed.
pub const MIN_PREDICTIVE_DRAWS: usize = 1000;

/// Simulate one predictive replicate y_rep ~ N(mu_t, 1/tau_t) per draw.
pub fn predictive_replicates(draws: &[(f64, f64)], rng: &mut ChainRng) -> Vec<f64> {
    draws
        .iter()
        .map(|&(mu, tau)| {
            let sd = (1.0 / tau).sqrt();
            Normal::new(mu, sd).expect("finite sd").sample(rng)
        })
        .collect()
}

/// Predictive HPD limits on the log scale from posterior draws: simulate one
/// replicate per draw, then take the shortest-window interval.
pub fn predictive_hpd(
    draws: &[(f64, f64)],
    alpha_level: f64,
    rng: &mut ChainRng,
) -> Result<Interval> {
    if draws.len() < MIN_PREDICTIVE_DRAWS {
        return Err(Error::TooFewSamples { required: MIN_PREDICTIVE_DRAWS, got: draws.len() });
    }
    let replicates = predictive_replicates(draws, rng);
    hpd_interval(&replicates, alpha_level)
}

/// Baseline comparator: sample mean ± z·sample SD on the log scale.
pub fn zscore_limits(data: &[f64], z: f64) -> Result<Interval> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewObservations { required: 2, got: n });
    }
    let nf = n as f64;
    let mean = data.iter().sum::<f64>() / nf;
    let var = data.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    Ok(Interval { lo: mean - z * sd, hi: mean + z * sd })
}
