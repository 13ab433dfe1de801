//! Ground-truth cohort simulator.
//!
//! Athletes are drawn from the same hierarchical model the multivariate fit
//! assumes: per athlete a random effect b_j ~ N(0, omega_b⁻¹) on the six
//! log concentrations, per sample a residual e_ij ~ N(0, omega_e⁻¹), sex
//! shifting the grand mean. Ratios are derived exactly (log differences), so
//! doping injections on concentrations propagate into correlated ratio
//! shifts. Injected samples carry their additive log shift in a truth
//! sidecar and are labeled atypical or abnormal by athlete group; everything
//! else is labeled normal.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::markers::{MarkerId, MarkerKind, Sex, CONCENTRATIONS, RATIOS};
use crate::profile::{
    AthleteSeries, BaselineSample, Label, Measurement, ProfileCollection, RawSample,
};
use crate::rng::{stream_id, stream_rng, StreamDomain};
use crate::sampling::sample_mvn_with_precision_factor;

/// One label group of athletes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub athletes: usize,
    /// Samples across the whole group; spread as evenly as possible.
    pub total_samples: usize,
    /// Injected (doped) samples across the group; every athlete of a doped
    /// group gets at least one.
    pub injected_samples: usize,
}

/// Full description of a synthetic cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub normal: GroupSpec,
    pub atypical: GroupSpec,
    pub abnormal: GroupSpec,
    pub baseline_males: usize,
    pub baseline_females: usize,
    /// Log-scale grand means of the six concentrations, male then female.
    pub log_means_male: Vec<f64>,
    pub log_means_female: Vec<f64>,
    /// True between-athlete precision of the six log concentrations.
    pub precision_between: SpdMatrix,
    /// True within-athlete precision.
    pub precision_within: SpdMatrix,
    /// Additive log-scale shifts applied to injected samples
    /// (multiplicative on the raw scale).
    pub injection_shifts: Vec<(MarkerId, f64)>,
    pub seed: u64,
}

/// Ground truth for one injected sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionRecord {
    pub athlete_id: String,
    pub timestamp: u64,
    pub shifts: Vec<(MarkerId, f64)>,
}

/// Log-scale means from the healthy-population summary table (medians of the
/// six concentrations).
pub const BASELINE_LOG_MEANS: [f64; 6] =
    [3.8420, 4.4903, 7.8310, 3.0215, 7.7570, 3.0151];

/// Total log-scale SDs implied by the same table (lognormal CV fit).
pub const BASELINE_LOG_SDS: [f64; 6] = [0.861, 0.931, 0.649, 0.982, 0.604, 0.932];

/// Equicorrelated covariance from per-marker SDs, returned as a precision.
pub fn equicorrelated_precision(sds: &[f64], corr: f64) -> Result<SpdMatrix> {
    let k = sds.len();
    let mut cov = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in 0..k {
            let c = if i == j { 1.0 } else { corr };
            cov[(i, j)] = c * sds[i] * sds[j];
        }
    }
    SpdMatrix::new(cov)?.inverse()
}

impl CohortSpec {
    fn with_sizes(normal: GroupSpec, atypical: GroupSpec, abnormal: GroupSpec, seed: u64) -> Self {
        let sex_shift = 0.15;
        let male: Vec<f64> = BASELINE_LOG_MEANS.iter().map(|m| m + sex_shift).collect();
        let female: Vec<f64> = BASELINE_LOG_MEANS.iter().map(|m| m - sex_shift).collect();
        // 70/30 split of the cross-sectional variance into between/within.
        let sd_b: Vec<f64> = BASELINE_LOG_SDS.iter().map(|s| s * 0.7f64.sqrt()).collect();
        let sd_e: Vec<f64> = BASELINE_LOG_SDS.iter().map(|s| s * 0.3f64.sqrt()).collect();
        CohortSpec {
            normal,
            atypical,
            abnormal,
            baseline_males: 91,
            baseline_females: 73,
            log_means_male: male,
            log_means_female: female,
            precision_between: equicorrelated_precision(&sd_b, 0.5).expect("SPD"),
            precision_within: equicorrelated_precision(&sd_e, 0.2).expect("SPD"),
            injection_shifts: vec![
                (MarkerId::T, 0.55),
                (MarkerId::A5, 0.5),
                (MarkerId::E, -0.35),
                (MarkerId::A, 0.3),
            ],
            seed,
        }
    }

    /// Cohort sized like the real dataset: 100 normal / 100 atypical / 29
    /// abnormal athletes with 1433 / 2504 / 462 samples (275 + 52 of them
    /// injected), baseline of 164 volunteers (91 men, 73 women).
    pub fn paper_sized(seed: u64) -> Self {
        Self::with_sizes(
            GroupSpec { athletes: 100, total_samples: 1433, injected_samples: 0 },
            GroupSpec { athletes: 100, total_samples: 2504, injected_samples: 275 },
            GroupSpec { athletes: 29, total_samples: 462, injected_samples: 52 },
            seed,
        )
    }

    /// Small benchmark cohort for experiments and tests.
    pub fn benchmark(seed: u64) -> Self {
        let mut spec = Self::with_sizes(
            GroupSpec { athletes: 20, total_samples: 160, injected_samples: 0 },
            GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 },
            GroupSpec { athletes: 14, total_samples: 112, injected_samples: 28 },
            seed,
        );
        spec.baseline_males = 35;
        spec.baseline_females = 35;
        spec
    }

    pub fn validate(&self) -> Result<()> {
        for (name, g) in
            [("normal", &self.normal), ("atypical", &self.atypical), ("abnormal", &self.abnormal)]
        {
            if g.athletes > 0 && g.total_samples < g.athletes {
                return Err(Error::InvalidSpec(format!(
                    "{name}: fewer samples ({}) than athletes ({})",
                    g.total_samples, g.athletes
                )));
            }
            if g.athletes == 0 && (g.total_samples > 0 || g.injected_samples > 0) {
                return Err(Error::InvalidSpec(format!("{name}: samples without athletes")));
            }
            if g.injected_samples > g.total_samples {
                return Err(Error::InvalidSpec(format!(
                    "{name}: more injected samples than samples"
                )));
            }
            if g.athletes > 0 && g.injected_samples > 0 && g.injected_samples < g.athletes {
                return Err(Error::InvalidSpec(format!(
                    "{name}: cannot give every athlete an injected sample"
                )));
            }
        }
        if self.normal.injected_samples > 0 {
            return Err(Error::InvalidSpec("normal group cannot have injections".into()));
        }
        for dim in [
            self.log_means_male.len(),
            self.log_means_female.len(),
            self.precision_between.dim(),
            self.precision_within.dim(),
        ] {
            if dim != CONCENTRATIONS.len() {
                return Err(Error::InvalidSpec(format!(
                    "expected dimension {} over the concentrations, got {dim}",
                    CONCENTRATIONS.len()
                )));
            }
        }
        for (m, _) in &self.injection_shifts {
            if m.kind() != MarkerKind::Concentration {
                return Err(Error::InvalidSpec(format!(
                    "injection shifts apply to concentrations, got {m}"
                )));
            }
        }
        Ok(())
    }
}

/// Even allocation of `total` samples over `athletes`.
fn allocate(total: usize, athletes: usize) -> Vec<usize> {
    if athletes == 0 {
        return Vec::new();
    }
    let base = total / athletes;
    let extra = total % athletes;
    (0..athletes).map(|i| base + usize::from(i < extra)).collect()
}

fn concentrations_to_sample(
    athlete_id: &str,
    timestamp: u64,
    sex: Sex,
    log_conc: &DVector<f64>,
    label: Label,
) -> RawSample {
    let mut values: BTreeMap<MarkerId, Measurement> = BTreeMap::new();
    for (k, &m) in CONCENTRATIONS.iter().enumerate() {
        values.insert(m, Measurement::measured(log_conc[k].exp()));
    }
    for &r in &RATIOS {
        let (num, den) = r.ratio_parts().expect("ratio");
        let diff = log_conc[num.canonical_index()] - log_conc[den.canonical_index()];
        values.insert(r, Measurement::measured(diff.exp()));
    }
    RawSample {
        athlete_id: athlete_id.to_string(),
        timestamp,
        sex,
        values,
        true_label: Some(label),
    }
}

/// Simulate a full cohort plus its cross-sectional baseline. Labels are
/// exact: the returned injection records list every doped sample and its
/// shift vector.
pub fn simulate_cohort(spec: &CohortSpec) -> Result<(ProfileCollection, Vec<InjectionRecord>)> {
    spec.validate()?;
    let factor_b = spec.precision_between.cholesky()?;
    let factor_e = spec.precision_within.cholesky()?;
    let k = CONCENTRATIONS.len();
    let zero = DVector::zeros(k);
    let mean_for = |sex: Sex| -> DVector<f64> {
        DVector::from_vec(match sex {
            Sex::Male => spec.log_means_male.clone(),
            Sex::Female => spec.log_means_female.clone(),
        })
    };

    let mut collection = ProfileCollection::default();
    let mut injections = Vec::new();

    let groups: [(&str, &GroupSpec, Label); 3] = [
        ("N", &spec.normal, Label::Normal),
        ("AT", &spec.atypical, Label::Atypical),
        ("AB", &spec.abnormal, Label::Abnormal),
    ];
    let mut athlete_counter: u32 = 0;
    for (prefix, group, doped_label) in groups {
        let counts = allocate(group.total_samples, group.athletes);
        // Injections: one guaranteed per athlete in a doped group, the rest
        // spread at random over remaining capacity.
        let mut injected_per_athlete = vec![0usize; group.athletes];
        if group.injected_samples > 0 {
            let mut alloc_rng =
                stream_rng(spec.seed, stream_id(StreamDomain::Simulator, athlete_counter, 0));
            for n in injected_per_athlete.iter_mut() {
                *n = 1;
            }
            let mut extras = group.injected_samples - group.athletes;
            while extras > 0 {
                use rand::Rng;
                let j = alloc_rng.random_range(0..group.athletes);
                if injected_per_athlete[j] < counts[j] {
                    injected_per_athlete[j] += 1;
                    extras -= 1;
                }
            }
        }

        for j in 0..group.athletes {
            athlete_counter += 1;
            let athlete_id = format!("{prefix}{:04}", j + 1);
            let sex = if j % 2 == 0 { Sex::Male } else { Sex::Female };
            let mut rng =
                stream_rng(spec.seed, stream_id(StreamDomain::Simulator, athlete_counter, 1));
            let n_j = counts[j];
            // Doped sample positions: a seeded shuffle prefix.
            let injected_at: Vec<usize> = {
                use rand::seq::SliceRandom;
                let mut positions: Vec<usize> = (0..n_j).collect();
                positions.shuffle(&mut rng);
                positions.into_iter().take(injected_per_athlete[j]).collect()
            };
            let b = sample_mvn_with_precision_factor(&zero, &factor_b, &mut rng);
            let mean = mean_for(sex) + &b;
            let mut samples = Vec::with_capacity(n_j);
            for i in 0..n_j {
                let mut log_conc =
                    sample_mvn_with_precision_factor(&mean, &factor_e, &mut rng);
                let injected = injected_at.contains(&i);
                if injected {
                    for &(m, delta) in &spec.injection_shifts {
                        log_conc[m.canonical_index()] += delta;
                    }
                }
                let label = if injected { doped_label } else { Label::Normal };
                let timestamp = (i + 1) as u64;
                if injected {
                    injections.push(InjectionRecord {
                        athlete_id: athlete_id.clone(),
                        timestamp,
                        shifts: spec.injection_shifts.clone(),
                    });
                }
                samples.push(concentrations_to_sample(&athlete_id, timestamp, sex, &log_conc, label));
            }
            collection.athletes.push(AthleteSeries { athlete_id, sex, samples });
        }
    }

    // Cross-sectional baseline: one sample per volunteer, no athlete series.
    let mut rng = stream_rng(spec.seed, stream_id(StreamDomain::Simulator, 0, 2));
    for (sex, count) in [(Sex::Male, spec.baseline_males), (Sex::Female, spec.baseline_females)] {
        for _ in 0..count {
            let b = sample_mvn_with_precision_factor(&zero, &factor_b, &mut rng);
            let mean = mean_for(sex) + b;
            let log_conc = sample_mvn_with_precision_factor(&mean, &factor_e, &mut rng);
            let sample = concentrations_to_sample("", 0, sex, &log_conc, Label::Normal);
            collection
                .population_baseline
                .push(BaselineSample { sex, values: sample.values });
        }
    }

    Ok((collection, injections))
}

/// Per-sex moments of the baseline population on the log scale.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineMoments {
    pub n: usize,
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Log-scale sample means (feeding mu0) and covariances per sex.
/// Requires at least two usable rows per present sex.
pub fn estimate_baseline_moments(
    baseline: &[BaselineSample],
    markers: &[MarkerId],
) -> Result<BTreeMap<Sex, BaselineMoments>> {
    let mut rows: BTreeMap<Sex, Vec<DVector<f64>>> = BTreeMap::new();
    for b in baseline {
        let v = b.log_vector(markers)?;
        rows.entry(b.sex).or_default().push(v.log_values().clone());
    }
    let mut out = BTreeMap::new();
    for (sex, rows) in rows {
        let n = rows.len();
        if n < 2 {
            return Err(Error::TooFewObservations { required: 2, got: n });
        }
        let k = markers.len();
        let mut mean = DVector::zeros(k);
        for r in &rows {
            mean += r;
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(k, k);
        for r in &rows {
            let d = r - &mean;
            cov += &d * d.transpose();
        }
        cov /= (n - 1) as f64;
        out.insert(sex, BaselineMoments { n, mean, covariance: cov });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::occ::{
        classify_sequence, ClassifierPolicy, DecisionRule, MarkerSubset, ModelContext, ModelKind,
        PopulationThresholds,
    };
    use crate::univariate::UnivariateConfig;

    #[test]
    fn zero_injections_label_everything_normal() {
        let mut spec = CohortSpec::benchmark(5);
        spec.abnormal.injected_samples = 0;
        // validate() forbids doped groups without injections only when
        // injected > 0; zero injections is the null cohort.
        let (cohort, injections) = simulate_cohort(&spec).unwrap();
        assert!(injections.is_empty());
        let counts = cohort.label_counts();
        assert_eq!(counts.get(&Label::Normal), Some(&cohort.total_samples()));
        assert_eq!(counts.get(&Label::Abnormal), None);
    }

    #[test]
    fn paper_sized_counts_match_by_group_and_label() {
        let spec = CohortSpec::paper_sized(11);
        let (cohort, injections) = simulate_cohort(&spec).unwrap();
        assert_eq!(cohort.athletes.len(), 229);
        let group_total = |prefix: &str| -> usize {
            cohort
                .athletes
                .iter()
                .filter(|a| a.athlete_id.starts_with(prefix))
                .map(|a| a.samples.len())
                .sum()
        };
        assert_eq!(group_total("N"), 1433);
        assert_eq!(group_total("AT"), 2504);
        assert_eq!(group_total("AB"), 462);
        assert_eq!(cohort.total_samples(), 4399);
        let counts = cohort.label_counts();
        assert_eq!(counts[&Label::Atypical], 275);
        assert_eq!(counts[&Label::Abnormal], 52);
        assert_eq!(counts[&Label::Normal], 4399 - 327);
        assert_eq!(injections.len(), 327);
        assert_eq!(cohort.population_baseline.len(), 164);
        let males =
            cohort.population_baseline.iter().filter(|b| b.sex == Sex::Male).count();
        assert_eq!(males, 91);
        // Sex split inside the groups: alternating, so 50/50 and 15/14.
        let ab_males = cohort
            .athletes
            .iter()
            .filter(|a| a.athlete_id.starts_with("AB") && a.sex == Sex::Male)
            .count();
        assert_eq!(ab_males, 15);
    }

    #[test]
    fn fixed_seed_reproduces_cohort() {
        let spec = CohortSpec::benchmark(123);
        let a = simulate_cohort(&spec).unwrap();
        let b = simulate_cohort(&spec).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let other = simulate_cohort(&CohortSpec::benchmark(124)).unwrap();
        assert_ne!(a.0, other.0);
    }

    #[test]
    fn huge_within_precision_freezes_athletes() {
        let mut spec = CohortSpec::benchmark(9);
        spec.precision_within = SpdMatrix::scaled_identity(6, 1e6).unwrap();
        let (cohort, _) = simulate_cohort(&spec).unwrap();
        let athlete = cohort.athletes.iter().find(|a| a.samples.len() >= 3).unwrap();
        let t_values: Vec<f64> = athlete
            .samples
            .iter()
            .map(|s| s.values[&MarkerId::T].value.ln())
            .collect();
        let mean = t_values.iter().sum::<f64>() / t_values.len() as f64;
        let sd = (t_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (t_values.len() as f64 - 1.0))
            .sqrt();
        assert!(sd < 0.01, "within-athlete sd {sd}");
    }

    #[test]
    fn ratios_are_consistent_with_concentrations() {
        let (cohort, _) = simulate_cohort(&CohortSpec::benchmark(2)).unwrap();
        let s = &cohort.athletes[0].samples[0];
        let te = s.values[&MarkerId::T_E].value;
        let direct = s.values[&MarkerId::T].value / s.values[&MarkerId::E].value;
        assert!((te - direct).abs() / direct < 1e-12);
    }

    #[test]
    fn baseline_moments_trivial_and_simulated() {
        // Two identical rows: mean is the row, covariance is zero.
        let mut values = BTreeMap::new();
        values.insert(MarkerId::T, Measurement::measured(20.0));
        let row = BaselineSample { sex: Sex::Male, values };
        let m = estimate_baseline_moments(&[row.clone(), row], &[MarkerId::T]).unwrap();
        let male = &m[&Sex::Male];
        assert!((male.mean[0] - 20.0f64.ln()).abs() < 1e-12);
        assert_eq!(male.covariance[(0, 0)], 0.0);

        // Simulated baseline recovers the configured grand means within 4 SE.
        let spec = CohortSpec::paper_sized(31);
        let (cohort, _) = simulate_cohort(&spec).unwrap();
        let m = estimate_baseline_moments(&cohort.population_baseline, &CONCENTRATIONS).unwrap();
        for (sex, means) in
            [(Sex::Male, &spec.log_means_male), (Sex::Female, &spec.log_means_female)]
        {
            let got = &m[&sex];
            for k in 0..CONCENTRATIONS.len() {
                let se = (got.covariance[(k, k)] / got.n as f64).sqrt();
                assert!(
                    (got.mean[k] - means[k]).abs() < 4.0 * se,
                    "{sex:?} marker {k}: {} vs {}",
                    got.mean[k],
                    means[k]
                );
            }
        }
    }

    #[test]
    fn per_sex_split_changes_only_rows_consumed() {
        let spec = CohortSpec::benchmark(8);
        let (cohort, _) = simulate_cohort(&spec).unwrap();
        let all = estimate_baseline_moments(&cohort.population_baseline, &[MarkerId::T]).unwrap();
        let males_only: Vec<BaselineSample> = cohort
            .population_baseline
            .iter()
            .filter(|b| b.sex == Sex::Male)
            .cloned()
            .collect();
        let males = estimate_baseline_moments(&males_only, &[MarkerId::T]).unwrap();
        assert_eq!(all[&Sex::Male], males[&Sex::Male]);
    }

    #[test]
    fn single_row_per_sex_is_rejected() {
        let mut values = BTreeMap::new();
        values.insert(MarkerId::T, Measurement::measured(20.0));
        let row = BaselineSample { sex: Sex::Female, values };
        assert!(matches!(
            estimate_baseline_moments(&[row], &[MarkerId::T]),
            Err(Error::TooFewObservations { required: 2, got: 1 })
        ));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = CohortSpec::benchmark(1);
        spec.normal.total_samples = 5; // fewer than 20 athletes
        assert!(matches!(simulate_cohort(&spec), Err(Error::InvalidSpec(_))));

        let mut spec = CohortSpec::benchmark(1);
        spec.abnormal.injected_samples = 5; // 14 athletes need >= 14
        assert!(matches!(simulate_cohort(&spec), Err(Error::InvalidSpec(_))));

        let mut spec = CohortSpec::benchmark(1);
        spec.injection_shifts = vec![(MarkerId::T_E, 1.0)];
        assert!(matches!(simulate_cohort(&spec), Err(Error::InvalidSpec(_))));
    }

    /// Injected-sample recall grows with the injected shift.
    #[test]
    fn power_is_monotone_in_shift() {
        let deltas = [0.0, 0.5, 1.0, 1.5];
        let mut power = Vec::new();
        for (d_idx, delta) in deltas.iter().enumerate() {
            let mut flags = 0usize;
            let mut total = 0usize;
            for seed in 0..100u64 {
                let mut spec = CohortSpec::benchmark(9000 + seed);
                spec.normal = GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 };
                spec.abnormal = GroupSpec { athletes: 1, total_samples: 10, injected_samples: 1 };
                spec.baseline_males = 0;
                spec.baseline_females = 0;
                spec.injection_shifts = vec![(MarkerId::T, *delta)];
                let (cohort, injections) = simulate_cohort(&spec).unwrap();

                let policy = ClassifierPolicy::new(
                    ModelKind::Univariate,
                    MarkerSubset::Single(MarkerId::T),
                    DecisionRule::Marginal,
                )
                .without_scores();
                let uni =
                    UnivariateConfig { n_draws: 1500, burn_in: 0, ..UnivariateConfig::default() };
                let mut overrides = BTreeMap::new();
                overrides.insert((Sex::Male, MarkerId::T), spec.log_means_male[5]);
                overrides.insert((Sex::Female, MarkerId::T), spec.log_means_female[5]);
                let ctx = ModelContext::new(
                    policy,
                    PopulationThresholds::defaults(),
                    uni,
                    Default::default(),
                    seed,
                    &[],
                    &[],
                    &overrides,
                )
                .unwrap();
                let decisions = classify_sequence(&cohort.athletes[0], d_idx as u32, &ctx).unwrap();
                for inj in &injections {
                    // Only samples past the first carry model decisions.
                    if inj.timestamp > 1 {
                        total += 1;
                        let d = decisions.iter().find(|d| d.timestamp == inj.timestamp).unwrap();
                        if d.flagged {
                            flags += 1;
                        }
                    }
                }
            }
            power.push(if total == 0 { 0.0 } else { flags as f64 / total as f64 });
        }
        for w in power.windows(2) {
            assert!(w[1] >= w[0] - 0.08, "power not monotone: {power:?}");
        }
        assert!(power[3] > power[0] + 0.3, "power curve too flat: {power:?}");
    }
}
