//! Highest-density regions estimated from Monte Carlo samples.
//!
//! Univariate intervals use the shortest-window order-statistic estimator:
//! the narrowest contiguous run of ⌈(1−α)·n⌉ sorted draws. Joint regions use
//! a density threshold γ chosen as the empirical α-quantile of the predictive
//! density evaluated at predictive draws, so that Pr(density ≥ γ) ≈ 1−α.

use crate::error::{Error, Result};

/// Closed interval on the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    /// Membership is closed on both ends.
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Minimum number of draws accepted by the interval estimators.
pub const MIN_HPD_SAMPLES: usize = 100;

/// Shortest-window HPD interval from unsorted draws.
pub fn hpd_interval(samples: &[f64], alpha: f64) -> Result<Interval> {
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    hpd_interval_sorted(&sorted, alpha)
}

/// Shortest-window HPD interval from draws already sorted ascending.
///
/// Scans every window of m = ⌈(1−α)·n⌉ consecutive order statistics and
/// returns the narrowest (the earliest when tied), which is exactly the
/// exhaustive minimum-width search.
pub fn hpd_interval_sorted(sorted: &[f64], alpha: f64) -> Result<Interval> {
    let n = sorted.len();
    if n < MIN_HPD_SAMPLES {
        return Err(Error::TooFewSamples { required: MIN_HPD_SAMPLES, got: n });
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in (0,1), got {alpha}")));
    }
    // At least two order statistics so a degenerate alpha still yields an
    // interval between adjacent draws.
    let m = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(2, n);
    let mut best = 0usize;
    let mut best_width = f64::INFINITY;
    for i in 0..=(n - m) {
        let width = sorted[i + m - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Ok(Interval { lo: sorted[best], hi: sorted[best + m - 1] })
}

/// Density threshold γ: the empirical α-quantile of `density_values`, which
/// are the predictive density evaluated at predictive draws. Works equally on
/// log densities since quantiles are monotone-invariant.
pub fn density_threshold(density_values: &[f64], alpha: f64) -> Result<f64> {
    let n = density_values.len();
    if n < MIN_HPD_SAMPLES {
        return Err(Error::TooFewSamples { required: MIN_HPD_SAMPLES, got: n });
    }
    if !(0.0 <= alpha && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0,1), got {alpha}")));
    }
    let mut sorted = density_values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite densities"));
    Ok(sorted[quantile_index(n, alpha)])
}

/// Index of the empirical α-quantile order statistic (0-based):
/// the ⌈α·n⌉-th smallest, clamped into range; α = 0 picks the minimum.
pub(crate) fn quantile_index(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64).ceil() as usize).max(1).min(n) - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Independent brute-force oracle: try every window of every legal size.
    fn brute_force_hpd(sorted: &[f64], alpha: f64) -> Interval {
        let n = sorted.len();
        let m = (((1.0 - alpha) * n as f64).ceil() as usize).clamp(2, n);
        let mut best = Interval { lo: sorted[0], hi: sorted[m - 1] };
        for i in 0..=(n - m) {
            if sorted[i + m - 1] - sorted[i] < best.width() {
                best = Interval { lo: sorted[i], hi: sorted[i + m - 1] };
            }
        }
        best
    }

    #[test]
    fn uniform_grid_window() {
        // 0..999 at alpha = 0.05: any window of ceil(950) points is minimal;
        // the scan returns the earliest, spanning 949 grid steps.
        let samples: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let iv = hpd_interval(&samples, 0.05).unwrap();
        assert_eq!(iv.width(), 949.0);
        assert_eq!(iv.lo, 0.0);
        let oracle = brute_force_hpd(&samples, 0.05);
        assert_eq!(iv, oracle);
    }

    #[test]
    fn standard_normal_quantiles() {
        let mut rng = crate::rng::stream_rng(20, 0);
        let samples: Vec<f64> = (0..1_000_000).map(|_| rng.sample(StandardNormal)).collect();
        let iv = hpd_interval(&samples, 0.05).unwrap();
        assert!((iv.lo + 1.96).abs() < 0.02, "lo {}", iv.lo);
        assert!((iv.hi - 1.96).abs() < 0.02, "hi {}", iv.hi);
    }

    #[test]
    fn degenerate_alpha_keeps_adjacent_order_statistics() {
        let samples: Vec<f64> = (0..100).map(|i| (i as f64).exp().sin() + i as f64).collect();
        let iv = hpd_interval(&samples, 0.999).unwrap();
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let found = sorted.windows(2).any(|w| w[0] == iv.lo && w[1] == iv.hi);
        assert!(found, "interval {iv:?} is not a pair of adjacent order statistics");
    }

    #[test]
    fn too_few_samples_rejected() {
        let samples: Vec<f64> = (0..99).map(|i| i as f64).collect();
        assert!(matches!(
            hpd_interval(&samples, 0.05),
            Err(Error::TooFewSamples { required: 100, got: 99 })
        ));
    }

    #[test]
    fn matches_brute_force_on_irregular_samples() {
        let mut rng = crate::rng::stream_rng(21, 0);
        for n in [100usize, 500, 2000, 5000] {
            // Mix of two lognormal clumps to get uneven spacing.
            let mut samples: Vec<f64> = (0..n)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    if rng.random::<f64>() < 0.3 {
                        (z * 0.3 + 2.0).exp()
                    } else {
                        z
                    }
                })
                .collect();
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for alpha in [0.01, 0.05, 0.2, 0.5, 0.9] {
                let iv = hpd_interval_sorted(&samples, alpha).unwrap();
                let oracle = brute_force_hpd(&samples, alpha);
                assert_eq!(iv, oracle, "n={n} alpha={alpha}");
            }
        }
    }

    #[test]
    fn interval_widths_nested_in_alpha() {
        let mut rng = crate::rng::stream_rng(22, 0);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let w10 = hpd_interval(&samples, 0.10).unwrap().width();
        let w05 = hpd_interval(&samples, 0.05).unwrap().width();
        assert!(w10 <= w05);
    }

    #[test]
    fn threshold_constant_densities() {
        let v = vec![3.25; 200];
        assert_eq!(density_threshold(&v, 0.05).unwrap(), 3.25);
    }

    #[test]
    fn threshold_is_order_statistic() {
        // {1..100} at alpha 0.05 -> 5th smallest = 5.
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(density_threshold(&v, 0.05).unwrap(), 5.0);
    }

    #[test]
    fn threshold_alpha_zero_is_minimum() {
        let v: Vec<f64> = (1..=150).rev().map(|i| i as f64).collect();
        assert_eq!(density_threshold(&v, 0.0).unwrap(), 1.0);
    }
}
