//! Imbalance-aware scoring: confusion matrices, the derived metric set
//! (precision, sensitivity, specificity, F1, G-mean, balanced and overall
//! accuracy with an exact binomial CI), and ROC / precision-recall curves
//! with trapezoid AUC. Ties in the score are grouped into one threshold step,
//! which makes the ROC AUC exactly the pairwise concordance probability.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};

pub mod svg;

/// Counts with the positive class = non-normal (flagged ground truth).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Count decisions against binarized labels. `decisions[i]` is the flag,
/// `labels[i]` is true when the sample is truly non-normal.
pub fn score(decisions: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    if decisions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: decisions.len(), right: labels.len() });
    }
    let mut cm = ConfusionMatrix::default();
    for (&flagged, &positive) in decisions.iter().zip(labels) {
        match (flagged, positive) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// Scalar metrics derived from a confusion matrix.
///
/// Zero-denominator ratios evaluate to 0 and raise `degenerate` instead of
/// erroring, so whole-grid sweeps (including all-negative classifiers) never
/// abort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub f1: f64,
    pub g_mean: f64,
    pub balanced_accuracy: f64,
    pub overall_accuracy: f64,
    pub accuracy_ci_lo: f64,
    pub accuracy_ci_hi: f64,
    pub degenerate: bool,
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derived metric set with a 95% Clopper-Pearson interval on the accuracy.
pub fn metrics(cm: &ConfusionMatrix) -> MetricsReport {
    let mut degenerate = false;
    let precision = ratio(cm.tp, cm.tp + cm.fp, &mut degenerate);
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_, &mut degenerate);
    let specificity = ratio(cm.tn, cm.tn + cm.fp, &mut degenerate);
    let f1 = if precision + sensitivity > 0.0 {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        degenerate = true;
        0.0
    };
    let g_mean = (sensitivity * specificity).sqrt();
    let balanced_accuracy = (sensitivity + specificity) / 2.0;
    let total = cm.total();
    let overall_accuracy = ratio(cm.tp + cm.tn, total, &mut degenerate);
    let (accuracy_ci_lo, accuracy_ci_hi) = if total == 0 {
        (0.0, 1.0)
    } else {
        clopper_pearson(cm.tp + cm.tn, total, 0.95)
    };
    MetricsReport {
        precision,
        sensitivity,
        specificity,
        f1,
        g_mean,
        balanced_accuracy,
        overall_accuracy,
        accuracy_ci_lo,
        accuracy_ci_hi,
        degenerate,
    }
}

/// Exact binomial (Clopper-Pearson) confidence interval for `x` successes in
/// `n` trials at the given confidence level.
pub fn clopper_pearson(x: u64, n: u64, level: f64) -> (f64, f64) {
    assert!(x <= n && n > 0, "need 0 <= x <= n, n > 0");
    let alpha = 1.0 - level;
    let (x, n) = (x as f64, n as f64);
    let lo = if x == 0.0 {
        0.0
    } else {
        Beta::new(x, n - x + 1.0).expect("valid Beta").inverse_cdf(alpha / 2.0)
    };
    let hi = if x == n {
        1.0
    } else {
        Beta::new(x + 1.0, n - x).expect("valid Beta").inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// A curve plus its trapezoid area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    /// (x, y) points with non-decreasing x.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Cumulative (threshold, tp, fp) per distinct score, descending; ties share
/// one step.
fn threshold_sweep(scores: &[f64], labels: &[bool]) -> Result<(Vec<(f64, u64, u64)>, u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClassInput);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));
    let mut sweep: Vec<(f64, u64, u64)> = Vec::new();
    let mut tp = 0u64;
    let mut fp = 0u64;
    for &i in &order {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        match sweep.last_mut() {
            Some(last) if last.0 == scores[i] => {
                last.1 = tp;
                last.2 = fp;
            }
            _ => sweep.push((scores[i], tp, fp)),
        }
    }
    Ok((sweep, positives, negatives))
}

/// ROC curve over every distinct score threshold (higher score = more
/// suspicious), anchored at (0,0) and (1,1). AUC by trapezoid; with grouped
/// ties this equals the Mann-Whitney concordance probability exactly.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Curve> {
    let (sweep, p, n) = threshold_sweep(scores, labels)?;
    let mut points = vec![(0.0, 0.0)];
    for &(_, tp, fp) in &sweep {
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    if *points.last().unwrap() != (1.0, 1.0) {
        points.push((1.0, 1.0));
    }
    let auc = trapezoid_area(&points);
    Ok(Curve { points, auc })
}

/// Precision-recall curve over every distinct score threshold, starting from
/// (0, 1). AUC by trapezoid over recall.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Curve> {
    let (sweep, p, _) = threshold_sweep(scores, labels)?;
    let mut points = vec![(0.0, 1.0)];
    for &(_, tp, fp) in &sweep {
        points.push((tp as f64 / p as f64, tp as f64 / (tp + fp) as f64));
    }
    let auc = trapezoid_area(&points);
    Ok(Curve { points, auc })
}
