//! One-class classification over longitudinal profiles.
//!
//! The first sample of an athlete is judged against population thresholds
//! (n = 0, nothing personal to compare with). Every later sample is judged
//! against predictive HPD limits from the policy's model, fitted on the
//! athlete's previously *accepted* samples plus the cross-sectional baseline
//! population. Flagged samples are excluded from subsequent training
//! histories when the continuity assumption is on, so one outlier cannot
//! widen the limits that follow it.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hpd::{hpd_interval_sorted, quantile_index, Interval};
use crate::markers::{MarkerId, Sex, ALL_MARKERS, CONCENTRATIONS, RATIOS};
use crate::multivariate::{
    marginal_hpds, run_gibbs, run_gibbs_from, AthletePredictive, GibbsConfig, MvChain, MvData,
    MvPrior, MvState,
};
use crate::profile::{AthleteSeries, BaselineSample, Label, MarkerVector};
use crate::rng::{stream_id, stream_rng, ChainRng, StreamDomain};
use crate::sampling::sample_mvn_with_precision_factor;
use crate::univariate::{
    posterior_update, predictive_replicates as uni_replicates, sample_posterior, UnivariateConfig,
};

/// Where an initial population threshold comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSource {
    WadaTd,
    PopulationMax,
    Q3Fallback,
}

/// Raw-scale limits applied to an athlete's first sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub upper: f64,
    pub lower: Option<f64>,
    pub source: ThresholdSource,
}

/// Population thresholds per (marker, sex).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationThresholds {
    entries: BTreeMap<(MarkerId, Sex), ThresholdEntry>,
}

impl PopulationThresholds {
    pub fn empty() -> Self {
        PopulationThresholds { entries: BTreeMap::new() }
    }

    /// The default limit set: WADA technical-document thresholds where
    /// published, the Caucasian population maximum for B5, and Q3-derived
    /// starting limits for the remaining ratios.
    pub fn defaults() -> Self {
        use MarkerId::*;
        use ThresholdSource::*;
        let mut t = PopulationThresholds::empty();
        {
            let mut both = |m: MarkerId, upper: f64, source: ThresholdSource| {
                t.set(m, Sex::Male, ThresholdEntry { upper, lower: None, source });
                t.set(m, Sex::Female, ThresholdEntry { upper, lower: None, source });
            };
            both(A, 10_000.0, WadaTd);
            both(ETIO, 10_000.0, WadaTd);
            both(T_E, 4.0, WadaTd);
            both(A_ETIO, 4.0, WadaTd);
            both(A5_B5, 4.0, Q3Fallback);
            both(A5_E, 10.0, Q3Fallback);
            both(A_T, 10_000.0, Q3Fallback);
        }
        t.set(A5, Sex::Male, ThresholdEntry { upper: 250.0, lower: None, source: WadaTd });
        t.set(A5, Sex::Female, ThresholdEntry { upper: 150.0, lower: None, source: WadaTd });
        t.set(T, Sex::Male, ThresholdEntry { upper: 200.0, lower: None, source: WadaTd });
        t.set(T, Sex::Female, ThresholdEntry { upper: 50.0, lower: None, source: WadaTd });
        t.set(E, Sex::Male, ThresholdEntry { upper: 200.0, lower: None, source: WadaTd });
        t.set(E, Sex::Female, ThresholdEntry { upper: 50.0, lower: None, source: WadaTd });
        t.set(B5, Sex::Male, ThresholdEntry { upper: 1260.0, lower: None, source: PopulationMax });
        t.set(B5, Sex::Female, ThresholdEntry { upper: 471.0, lower: None, source: PopulationMax });
        t
    }

    pub fn set(&mut self, marker: MarkerId, sex: Sex, entry: ThresholdEntry) {
        self.entries.insert((marker, sex), entry);
    }

    pub fn get(&self, marker: MarkerId, sex: Sex) -> Option<&ThresholdEntry> {
        self.entries.get(&(marker, sex))
    }
}

/// Which model produces the personalised limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Univariate,
    Multivariate,
}

/// Flag on any single marker, or on the joint density region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    Marginal,
    Joint,
}

/// The marker panel a policy watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerSubset {
    Eaas,
    Ratios,
    All,
    Single(MarkerId),
}

impl MarkerSubset {
    pub fn markers(&self) -> Vec<MarkerId> {
        match self {
            MarkerSubset::Eaas => CONCENTRATIONS.to_vec(),
            MarkerSubset::Ratios => RATIOS.to_vec(),
            MarkerSubset::All => ALL_MARKERS.to_vec(),
            MarkerSubset::Single(m) => vec![*m],
        }
    }

    pub fn label(&self) -> String {
        match self {
            MarkerSubset::Eaas => "EAAS".into(),
            MarkerSubset::Ratios => "ratios".into(),
            MarkerSubset::All => "all".into(),
            MarkerSubset::Single(m) => m.display_name().into(),
        }
    }
}

/// Full decision policy for a classification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierPolicy {
    pub model: ModelKind,
    pub marker_subset: MarkerSubset,
    pub rule: DecisionRule,
    pub alpha_level: f64,
    /// Continuity assumption: flagged samples never re-enter training sets.
    pub exclude_flagged: bool,
    /// Predictive replicates per decision (>= 1000).
    pub n_replicates: usize,
    /// Alpha grid for the suspicion score; None skips score computation.
    pub score_grid: Option<Vec<f64>>,
}

impl ClassifierPolicy {
    pub fn new(model: ModelKind, marker_subset: MarkerSubset, rule: DecisionRule) -> Self {
        ClassifierPolicy {
            model,
            marker_subset,
            rule,
            alpha_level: 0.05,
            exclude_flagged: true,
            n_replicates: 2000,
            score_grid: Some(default_score_grid()),
        }
    }

    pub fn without_scores(mut self) -> Self {
        self.score_grid = None;
        self
    }
}

/// 0.02, 0.04, ..., 0.98.
pub fn default_score_grid() -> Vec<f64> {
    (1..=49).map(|i| i as f64 * 0.02).collect()
}

/// Which rule produced a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFired {
    PopulationThreshold,
    MarginalHpd,
    JointRegion,
}

/// Per-sample classification record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HpdDecision {
    pub athlete_id: String,
    pub timestamp: u64,
    pub markers: Vec<MarkerId>,
    /// Log-scale limits per marker (population thresholds are mapped onto the
    /// log scale for the first sample).
    pub intervals: Vec<Interval>,
    /// Per-marker outside flags.
    pub outside: Vec<bool>,
    /// Joint-region membership, when the joint rule ran.
    pub joint_member: Option<bool>,
    pub flagged: bool,
    pub rule_fired: RuleFired,
    /// 1 − largest alpha on the grid at which the sample still sits inside;
    /// higher is more suspicious.
    pub suspicion_score: Option<f64>,
    /// Number of accepted history samples the decision was trained on.
    pub training_n: usize,
}

// JSON has no infinities; unbounded interval ends are encoded as null.
impl Serialize for Interval {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let enc = |v: f64| v.is_finite().then_some(v);
        (enc(self.lo), enc(self.hi)).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Interval {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (lo, hi) = <(Option<f64>, Option<f64>)>::deserialize(d)?;
        Ok(Interval {
            lo: lo.unwrap_or(f64::NEG_INFINITY),
            hi: hi.unwrap_or(f64::INFINITY),
        })
    }
}

/// Check one sample against the population thresholds (the n = 0 rule).
/// `raw_values` are substituted raw-scale values.
pub fn threshold_check(
    raw_values: &BTreeMap<MarkerId, f64>,
    sex: Sex,
    thresholds: &PopulationThresholds,
    markers: &[MarkerId],
    athlete_id: &str,
    timestamp: u64,
) -> Result<HpdDecision> {
    let mut intervals = Vec::with_capacity(markers.len());
    let mut outside = Vec::with_capacity(markers.len());
    for &marker in markers {
        let entry =
            thresholds.get(marker, sex).ok_or(Error::MissingThreshold { marker, sex })?;
        let value = *raw_values
            .get(&marker)
            .ok_or(Error::UnknownMarkerColumn { column: marker.column_name().to_string() })?;
        let iv = Interval {
            lo: entry.lower.map(f64::ln).unwrap_or(f64::NEG_INFINITY),
            hi: entry.upper.ln(),
        };
        // Raw-scale comparison; identical to the log comparison because ln is
        // monotone and membership is closed on both representations.
        let inside = value <= entry.upper && entry.lower.is_none_or(|lo| value >= lo);
        intervals.push(iv);
        outside.push(!inside);
    }
    let flagged = outside.iter().any(|&o| o);
    Ok(HpdDecision {
        athlete_id: athlete_id.to_string(),
        timestamp,
        markers: markers.to_vec(),
        intervals,
        outside,
        joint_member: None,
        flagged,
        rule_fired: RuleFired::PopulationThreshold,
        suspicion_score: Some(if flagged { 1.0 } else { 0.0 }),
        training_n: 0,
    })
}

/// Everything a sequential classification run needs besides the athlete.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub policy: ClassifierPolicy,
    pub thresholds: PopulationThresholds,
    pub uni: UnivariateConfig,
    pub gibbs: GibbsConfig,
    pub seed: u64,
    markers: Vec<MarkerId>,
    baseline_by_sex: BTreeMap<Sex, Vec<DVector<f64>>>,
    /// Longitudinal series of known-normal athletes, per sex. The repeated
    /// measures identify omega_e; a fit on cross-sectional singletons alone
    /// cannot separate within- from between-athlete variation and lets the
    /// error precision drift toward its prior mean.
    training_by_sex: BTreeMap<Sex, Vec<(String, Vec<DVector<f64>>)>>,
    mu0_by_sex: BTreeMap<Sex, DVector<f64>>,
}

impl ModelContext {
    /// Build a context from the baseline population and a pool of normal
    /// training athletes. Baseline log-scale means become the prior means
    /// per sex; `mu0_overrides` wins where present. A sex without either
    /// source fails at classification time rather than falling back to an
    /// invented default.
    pub fn new(
        policy: ClassifierPolicy,
        thresholds: PopulationThresholds,
        uni: UnivariateConfig,
        gibbs: GibbsConfig,
        seed: u64,
        baseline: &[BaselineSample],
        training: &[AthleteSeries],
        mu0_overrides: &BTreeMap<(Sex, MarkerId), f64>,
    ) -> Result<Self> {
        let markers = policy.marker_subset.markers();
        let mut baseline_by_sex: BTreeMap<Sex, Vec<DVector<f64>>> = BTreeMap::new();
        for b in baseline {
            if let Ok(v) = b.log_vector(&markers) {
                baseline_by_sex.entry(b.sex).or_default().push(v.log_values().clone());
            }
        }
        let mut training_by_sex: BTreeMap<Sex, Vec<(String, Vec<DVector<f64>>)>> = BTreeMap::new();
        for athlete in training {
            let mut vectors = Vec::with_capacity(athlete.samples.len());
            for s in &athlete.samples {
                let lv = crate::profile::log_transform(&s.substituted()?, &markers)?;
                vectors.push(lv.log_values().clone());
            }
            if !vectors.is_empty() {
                training_by_sex
                    .entry(athlete.sex)
                    .or_default()
                    .push((athlete.athlete_id.clone(), vectors));
            }
        }
        let mut mu0_by_sex = BTreeMap::new();
        for sex in [Sex::Male, Sex::Female] {
            let rows = baseline_by_sex.get(&sex).filter(|r| !r.is_empty());
            let mut mu0 = DVector::zeros(markers.len());
            let mut ok = true;
            for (k, &marker) in markers.iter().enumerate() {
                if let Some(&v) = mu0_overrides.get(&(sex, marker)) {
                    mu0[k] = v;
                } else if let Some(rows) = rows {
                    mu0[k] = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
                } else {
                    ok = false;
                    break;
                }
            }
            if ok {
                mu0_by_sex.insert(sex, mu0);
            }
        }
        Ok(ModelContext {
            policy,
            thresholds,
            uni,
            gibbs,
            seed,
            markers,
            baseline_by_sex,
            training_by_sex,
            mu0_by_sex,
        })
    }

    pub fn markers(&self) -> &[MarkerId] {
        &self.markers
    }

    fn mu0_for(&self, sex: Sex) -> Result<&DVector<f64>> {
        self.mu0_by_sex
            .get(&sex)
            .ok_or(Error::MissingBaselineMean { marker: self.markers[0], sex })
    }

    fn baseline_vectors(&self, sex: Sex) -> &[DVector<f64>] {
        self.baseline_by_sex.get(&sex).map(|v| v.as_slice()).unwrap_or(&[])
    }

    fn training_groups(&self, sex: Sex, exclude_id: &str) -> Vec<Vec<DVector<f64>>> {
        self.training_by_sex
            .get(&sex)
            .map(|athletes| {
                athletes
                    .iter()
                    .filter(|(id, _)| id != exclude_id)
                    .map(|(_, obs)| obs.clone())
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Classify an athlete's samples in order. The first sample goes through the
/// population thresholds; every later one through the policy's model fitted
/// on the baseline plus the athlete's accepted history.
pub fn classify_sequence(
    athlete: &AthleteSeries,
    athlete_index: u32,
    ctx: &ModelContext,
) -> Result<Vec<HpdDecision>> {
    if athlete.samples.is_empty() {
        return Err(Error::EmptyAthlete(athlete.athlete_id.clone()));
    }
    let markers = &ctx.markers;
    // Substituted raw values and log vectors, precomputed per sample.
    let mut raw_values = Vec::with_capacity(athlete.samples.len());
    let mut log_vectors = Vec::with_capacity(athlete.samples.len());
    for s in &athlete.samples {
        let sub = s.substituted()?;
        let lv = crate::profile::log_transform(&sub, markers)?;
        raw_values.push(sub);
        log_vectors.push(lv);
    }

    let mut decisions = Vec::with_capacity(athlete.samples.len());
    let mut accepted: Vec<MarkerVector> = Vec::new();
    let mut warm_state: Option<MvState> = None;

    for (i, sample) in athlete.samples.iter().enumerate() {
        let decision = if i == 0 {
            threshold_check(
                &raw_values[i],
                athlete.sex,
                &ctx.thresholds,
                markers,
                &athlete.athlete_id,
                sample.timestamp,
            )?
        } else {
            let mut rng_fit =
                stream_rng(ctx.seed, stream_id(StreamDomain::Fit, athlete_index, i as u32));
            let mut rng_dec =
                stream_rng(ctx.seed, stream_id(StreamDomain::Classify, athlete_index, i as u32));
            match ctx.policy.model {
                ModelKind::Univariate => classify_univariate(
                    ctx,
                    athlete,
                    sample.timestamp,
                    &accepted,
                    &log_vectors[i],
                    &mut rng_dec,
                )?,
                ModelKind::Multivariate => classify_multivariate(
                    ctx,
                    athlete,
                    sample.timestamp,
                    &accepted,
                    &log_vectors[i],
                    &mut warm_state,
                    &mut rng_fit,
                    &mut rng_dec,
                )?,
            }
        };
        if !(decision.flagged && ctx.policy.exclude_flagged) {
            accepted.push(log_vectors[i].clone());
        }
        decisions.push(decision);
    }
    Ok(decisions)
}

/// Suspicion score: 1 − the largest grid alpha at which the sample is still
/// inside. `inside_at` answers membership at a given alpha.
fn sweep_score(grid: &[f64], inside_at: impl Fn(f64) -> bool) -> f64 {
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite alphas"));
    for &alpha in &sorted {
        if inside_at(alpha) {
            return 1.0 - alpha;
        }
    }
    1.0
}

fn classify_univariate(
    ctx: &ModelContext,
    athlete: &AthleteSeries,
    timestamp: u64,
    accepted: &[MarkerVector],
    current: &MarkerVector,
    rng: &mut ChainRng,
) -> Result<HpdDecision> {
    let markers = &ctx.markers;
    let mu0 = ctx.mu0_for(athlete.sex)?.clone();
    let alpha = ctx.policy.alpha_level;

    // Per-marker replicate sets, sorted; shared by the decision and the
    // score sweep.
    let mut sorted_reps: Vec<Vec<f64>> = Vec::with_capacity(markers.len());
    for (k, _) in markers.iter().enumerate() {
        let history: Vec<f64> = accepted.iter().map(|v| v.log_values()[k]).collect();
        let prior = ctx.uni.prior(mu0[k])?;
        let post = posterior_update(&prior, &history);
        let draws = sample_posterior(&post, ctx.uni.n_draws, ctx.uni.burn_in, rng);
        let mut reps = uni_replicates(&draws, rng);
        reps.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite replicates"));
        sorted_reps.push(reps);
    }

    let mut intervals = Vec::with_capacity(markers.len());
    let mut outside = Vec::with_capacity(markers.len());
    for (k, reps) in sorted_reps.iter().enumerate() {
        let iv = hpd_interval_sorted(reps, alpha)?;
        outside.push(!iv.contains(current.log_values()[k]));
        intervals.push(iv);
    }

    // Joint rule over independent per-marker fits: the joint predictive is
    // the product of the marginals, so the gamma threshold comes from summed
    // per-marker log densities at paired replicates.
    let joint_logs = |reps: &[Vec<f64>]| -> Vec<f64> {
        let n = reps[0].len();
        let mut out: Vec<f64> = Vec::with_capacity(n);
        for i in 0..n {
            out.push((0..reps.len()).map(|k| log_density_from_sorted(&reps[k], reps[k][i])).sum());
        }
        out.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite log densities"));
        out
    };
    let sample_log = |y: &DVector<f64>| -> f64 {
        (0..markers.len()).map(|k| log_density_from_sorted(&sorted_reps[k], y[k])).sum()
    };

    let (flagged, joint_member, rule_fired) = match ctx.policy.rule {
        DecisionRule::Marginal => (outside.iter().any(|&o| o), None, RuleFired::MarginalHpd),
        DecisionRule::Joint => {
            let rep_logs = joint_logs(&sorted_reps);
            let member = sample_log(current.log_values())
                >= rep_logs[quantile_index(rep_logs.len(), alpha)];
            (!member, Some(member), RuleFired::JointRegion)
        }
    };

    let suspicion_score = ctx.policy.score_grid.as_ref().map(|grid| match ctx.policy.rule {
        DecisionRule::Marginal => sweep_score(grid, |a| {
            (0..markers.len()).all(|k| {
                hpd_interval_sorted(&sorted_reps[k], a)
                    .map(|iv| iv.contains(current.log_values()[k]))
                    .unwrap_or(true)
            })
        }),
        DecisionRule::Joint => {
            let rep_logs = joint_logs(&sorted_reps);
            let y_log = sample_log(current.log_values());
            sweep_score(grid, |a| y_log >= rep_logs[quantile_index(rep_logs.len(), a)])
        }
    });

    Ok(HpdDecision {
        athlete_id: athlete.athlete_id.clone(),
        timestamp,
        markers: markers.clone(),
        intervals,
        outside,
        joint_member,
        flagged,
        rule_fired,
        suspicion_score,
        training_n: accepted.len(),
    })
}

/// Marginal predictive log density approximated from sorted replicates by the
/// local order-statistic spacing.
fn log_density_from_sorted(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len();
    let pos = sorted.partition_point(|&v| v < y);
    let w = (n / 50).clamp(5, n - 1);
    let lo = pos.saturating_sub(w / 2).min(n - 1 - w);
    let width = (sorted[lo + w] - sorted[lo]).max(1e-300);
    ((w as f64 / n as f64) / width).ln()
}

#[allow(clippy::too_many_arguments)]
fn classify_multivariate(
    ctx: &ModelContext,
    athlete: &AthleteSeries,
    timestamp: u64,
    accepted: &[MarkerVector],
    current: &MarkerVector,
    warm_state: &mut Option<MvState>,
    rng_fit: &mut ChainRng,
    rng_dec: &mut ChainRng,
) -> Result<HpdDecision> {
    let markers = &ctx.markers;
    let alpha = ctx.policy.alpha_level;
    let prior = MvPrior::default_for(ctx.mu0_for(athlete.sex)?.clone());

    // Training set: longitudinal normal athletes (minus this athlete),
    // cross-sectional baseline singletons, then the athlete's accepted
    // history as the final group.
    let mut groups = ctx.training_groups(athlete.sex, &athlete.athlete_id);
    groups.extend(ctx.baseline_vectors(athlete.sex).iter().map(|v| vec![v.clone()]));
    let athlete_in_fit = !accepted.is_empty();
    if athlete_in_fit {
        groups.push(accepted.iter().map(|v| v.log_values().clone()).collect());
    }
    if groups.is_empty() {
        return Err(Error::MissingBaselineMean { marker: markers[0], sex: athlete.sex });
    }
    let data = MvData::new(groups)?;

    let chain = match warm_state.take() {
        Some(state) => run_gibbs_from(&data, &prior, &ctx.gibbs.warm_config(), state, rng_fit)?,
        None => run_gibbs(&data, &prior, &ctx.gibbs, rng_fit)?,
    };
    *warm_state = Some(chain.last_state().clone());

    let predictive = if athlete_in_fit {
        AthletePredictive::new(&chain, chain.n_athletes - 1)?
    } else {
        fresh_athlete_predictive(&chain, rng_dec)?
    };

    let replicates = predictive.replicates(ctx.policy.n_replicates, rng_dec);
    let intervals = marginal_hpds(&replicates, alpha)?;
    let outside: Vec<bool> = intervals
        .iter()
        .enumerate()
        .map(|(k, iv)| !iv.contains(current.log_values()[k]))
        .collect();

    let (flagged, joint_member, rule_fired) = match ctx.policy.rule {
        DecisionRule::Marginal => (outside.iter().any(|&o| o), None, RuleFired::MarginalHpd),
        DecisionRule::Joint => {
            let region = predictive.joint_region(&replicates, alpha)?;
            let member = region.contains(&predictive, current.log_values());
            (!member, Some(member), RuleFired::JointRegion)
        }
    };

    let suspicion_score = match &ctx.policy.score_grid {
        None => None,
        Some(grid) => Some(match ctx.policy.rule {
            DecisionRule::Marginal => {
                let sorted_cols: Vec<Vec<f64>> = (0..markers.len())
                    .map(|k| {
                        let mut col: Vec<f64> = replicates.iter().map(|r| r[k]).collect();
                        col.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
                        col
                    })
                    .collect();
                sweep_score(grid, |a| {
                    (0..markers.len()).all(|k| {
                        hpd_interval_sorted(&sorted_cols[k], a)
                            .map(|iv| iv.contains(current.log_values()[k]))
                            .unwrap_or(true)
                    })
                })
            }
            DecisionRule::Joint => {
                let mut rep_logs: Vec<f64> =
                    replicates.iter().map(|y| predictive.log_density(y)).collect();
                rep_logs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite"));
                let y_log = predictive.log_density(current.log_values());
                sweep_score(grid, |a| y_log >= rep_logs[quantile_index(rep_logs.len(), a)])
            }
        }),
    };

    Ok(HpdDecision {
        athlete_id: athlete.athlete_id.clone(),
        timestamp,
        markers: markers.clone(),
        intervals,
        outside,
        joint_member,
        flagged,
        rule_fired,
        suspicion_score,
        training_n: accepted.len(),
    })
}

/// Predictive for an athlete with no accepted history: per retained state,
/// draw a fresh athlete mean mu_j ~ N(mu, omega_b⁻¹).
fn fresh_athlete_predictive(chain: &MvChain, rng: &mut ChainRng) -> Result<AthletePredictive> {
    let mut states = Vec::with_capacity(chain.states.len());
    for s in &chain.states {
        let factor = s.omega_b.cholesky()?;
        let mu_j = sample_mvn_with_precision_factor(&s.mu, &factor, rng);
        let mut state = s.clone();
        state.mu_j = vec![mu_j];
        states.push(state);
    }
    let fresh = MvChain { states, config: chain.config, dim: chain.dim, n_athletes: 1 };
    AthletePredictive::new(&fresh, 0)
}

/// Binary ground truth for evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinaryLabel {
    Normal,
    NonNormal,
}

/// Atypical and abnormal both count as non-normal.
pub fn binarize_label(label: Option<Label>) -> Result<BinaryLabel> {
    match label {
        Some(Label::Normal) => Ok(BinaryLabel::Normal),
        Some(Label::Atypical) | Some(Label::Abnormal) => Ok(BinaryLabel::NonNormal),
        None => Err(Error::MissingLabel),
    }
}

/// Random oversampling to exact balance: every original row is kept and
/// minority rows are drawn with replacement until the class counts match.
/// Returns indices into the input, so each replicate's provenance is the
/// index itself.
pub fn random_oversample(labels: &[bool], rng: &mut ChainRng) -> Result<Vec<usize>> {
    use rand::Rng;
    let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let negatives: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::SingleClassInput);
    }
    let mut out: Vec<usize> = (0..labels.len()).collect();
    let (minority, deficit) = if positives.len() < negatives.len() {
        (&positives, negatives.len() - positives.len())
    } else {
        (&negatives, positives.len() - negatives.len())
    };
    for _ in 0..deficit {
        out.push(minority[rng.random_range(0..minority.len())]);
    }
    Ok(out)
}

/// Export decisions as newline-delimited JSON records.
pub fn write_decisions<W: Write>(decisions: &[HpdDecision], mut w: W) -> Result<()> {
    for d in decisions {
        serde_json::to_writer(&mut w, d)
            .map_err(|e| Error::MalformedRow { line: 0, reason: e.to_string() })?;
        w.write_all(b"\n").map_err(|e| Error::MalformedRow { line: 0, reason: e.to_string() })?;
    }
    Ok(())
}
