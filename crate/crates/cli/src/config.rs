//! Run configuration: versioned, human-editable TOML. Every run re-emits the
//! resolved config next to its outputs so results are reproducible from the
//! file plus a seed.

use std::collections::BTreeMap;
use std::path::Path;

use abp_core::cohort::{CohortSpec, GroupSpec};
use abp_core::markers::MarkerId;
use abp_core::multivariate::{GibbsConfig, WarmPhase};
use abp_core::occ::{ClassifierPolicy, DecisionRule, MarkerSubset, ModelKind};
use abp_core::univariate::UnivariateConfig;
use serde::{Deserialize, Serialize};

/// A configuration problem; reported with the offending key and exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub evaluate: EvaluateSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// "benchmark" (small) or "paper" (229 athletes / 4,399 samples).
    pub preset: String,
    #[serde(default)]
    pub normal: Option<GroupToml>,
    #[serde(default)]
    pub atypical: Option<GroupToml>,
    #[serde(default)]
    pub abnormal: Option<GroupToml>,
    #[serde(default)]
    pub baseline_males: Option<usize>,
    #[serde(default)]
    pub baseline_females: Option<usize>,
    /// Multiplies every true log-scale SD.
    #[serde(default)]
    pub dispersion_scale: Option<f64>,
    /// (marker, additive log shift) pairs applied to injected samples.
    #[serde(default)]
    pub injection_shifts: Option<Vec<(String, f64)>>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            preset: "benchmark".into(),
            normal: None,
            atypical: None,
            abnormal: None,
            baseline_males: None,
            baseline_females: None,
            dispersion_scale: None,
            injection_shifts: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupToml {
    pub athletes: usize,
    pub total_samples: usize,
    #[serde(default)]
    pub injected_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// "multivariate" or "univariate".
    pub kind: String,
    /// "ratios", "eaas", "all" or a single marker name (e.g. "T/E").
    pub subset: String,
    /// "marginal" or "joint".
    pub rule: String,
    pub alpha_level: f64,
    pub exclude_flagged: bool,
    pub n_replicates: usize,
    /// Compute alpha-sweep suspicion scores per decision.
    pub scores: bool,
    #[serde(default)]
    pub univariate: UnivariateToml,
    #[serde(default)]
    pub gibbs: GibbsToml,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "multivariate".into(),
            subset: "ratios".into(),
            rule: "marginal".into(),
            alpha_level: 0.05,
            exclude_flagged: true,
            n_replicates: 2000,
            scores: true,
            univariate: UnivariateToml::default(),
            gibbs: GibbsToml::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnivariateToml {
    pub kappa0: f64,
    pub alpha0: f64,
    pub beta0: f64,
    pub n_draws: usize,
    pub burn_in: usize,
}

impl Default for UnivariateToml {
    fn default() -> Self {
        let d = UnivariateConfig::default();
        UnivariateToml {
            kappa0: d.kappa0,
            alpha0: d.alpha0,
            beta0: d.beta0,
            n_draws: d.n_draws,
            burn_in: d.burn_in,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GibbsToml {
    pub total_iterations: usize,
    pub burn_in_fraction: f64,
    pub thinning: usize,
    #[serde(default)]
    pub warm_iterations: Option<usize>,
    #[serde(default)]
    pub warm_burn_in_fraction: Option<f64>,
}

impl Default for GibbsToml {
    fn default() -> Self {
        GibbsToml {
            total_iterations: 3000,
            burn_in_fraction: 1.0 / 3.0,
            thinning: 1,
            warm_iterations: Some(600),
            warm_burn_in_fraction: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// "paper" sweeps eleven univariate single-marker policies plus the three
    /// multivariate subsets; "single" evaluates only the [model] policy.
    pub grid: String,
    pub oversample: bool,
    pub svg: bool,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection { grid: "paper".into(), oversample: true, svg: true }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != 1 {
            return Err(ConfigError(format!("version: expected 1, got {}", self.version)));
        }
        match self.simulate.preset.as_str() {
            "benchmark" | "paper" => {}
            other => {
                return Err(ConfigError(format!("simulate.preset: unknown preset `{other}`")))
            }
        }
        self.model_kind()?;
        self.marker_subset()?;
        self.decision_rule()?;
        if !(0.0 < self.model.alpha_level && self.model.alpha_level < 1.0) {
            return Err(ConfigError(format!(
                "model.alpha_level: must be in (0,1), got {}",
                self.model.alpha_level
            )));
        }
        if let Some(shifts) = &self.simulate.injection_shifts {
            for (name, _) in shifts {
                parse_marker(name).ok_or_else(|| {
                    ConfigError(format!("simulate.injection_shifts: unknown marker `{name}`"))
                })?;
            }
        }
        match self.evaluate.grid.as_str() {
            "paper" | "single" => {}
            other => return Err(ConfigError(format!("evaluate.grid: unknown grid `{other}`"))),
        }
        Ok(())
    }

    pub fn model_kind(&self) -> Result<ModelKind, ConfigError> {
        match self.model.kind.as_str() {
            "multivariate" => Ok(ModelKind::Multivariate),
            "univariate" => Ok(ModelKind::Univariate),
            other => Err(ConfigError(format!("model.kind: unknown kind `{other}`"))),
        }
    }

    pub fn marker_subset(&self) -> Result<MarkerSubset, ConfigError> {
        match self.model.subset.as_str() {
            "ratios" => Ok(MarkerSubset::Ratios),
            "eaas" | "EAAS" => Ok(MarkerSubset::Eaas),
            "all" => Ok(MarkerSubset::All),
            other => parse_marker(other).map(MarkerSubset::Single).ok_or_else(|| {
                ConfigError(format!("model.subset: unknown subset `{other}`"))
            }),
        }
    }

    pub fn decision_rule(&self) -> Result<DecisionRule, ConfigError> {
        match self.model.rule.as_str() {
            "marginal" => Ok(DecisionRule::Marginal),
            "joint" => Ok(DecisionRule::Joint),
            other => Err(ConfigError(format!("model.rule: unknown rule `{other}`"))),
        }
    }

    pub fn policy(&self) -> Result<ClassifierPolicy, ConfigError> {
        let mut policy =
            ClassifierPolicy::new(self.model_kind()?, self.marker_subset()?, self.decision_rule()?);
        policy.alpha_level = self.model.alpha_level;
        policy.exclude_flagged = self.model.exclude_flagged;
        policy.n_replicates = self.model.n_replicates;
        if !self.model.scores {
            policy.score_grid = None;
        }
        Ok(policy)
    }

    pub fn univariate_config(&self) -> UnivariateConfig {
        UnivariateConfig {
            kappa0: self.model.univariate.kappa0,
            alpha0: self.model.univariate.alpha0,
            beta0: self.model.univariate.beta0,
            n_draws: self.model.univariate.n_draws,
            burn_in: self.model.univariate.burn_in,
            alpha_level: self.model.alpha_level,
        }
    }

    pub fn gibbs_config(&self) -> GibbsConfig {
        GibbsConfig {
            total_iterations: self.model.gibbs.total_iterations,
            burn_in_fraction: self.model.gibbs.burn_in_fraction,
            thinning: self.model.gibbs.thinning,
            seed: self.seed,
            warm: self.model.gibbs.warm_iterations.map(|total_iterations| WarmPhase {
                total_iterations,
                burn_in_fraction: self
                    .model
                    .gibbs
                    .warm_burn_in_fraction
                    .unwrap_or(self.model.gibbs.burn_in_fraction),
            }),
        }
    }

    pub fn cohort_spec(&self) -> Result<CohortSpec, ConfigError> {
        let mut spec = match self.simulate.preset.as_str() {
            "paper" => CohortSpec::paper_sized(self.seed),
            _ => CohortSpec::benchmark(self.seed),
        };
        let apply = |g: &mut GroupSpec, o: &Option<GroupToml>| {
            if let Some(o) = o {
                *g = GroupSpec {
                    athletes: o.athletes,
                    total_samples: o.total_samples,
                    injected_samples: o.injected_samples,
                };
            }
        };
        apply(&mut spec.normal, &self.simulate.normal);
        apply(&mut spec.atypical, &self.simulate.atypical);
        apply(&mut spec.abnormal, &self.simulate.abnormal);
        if let Some(m) = self.simulate.baseline_males {
            spec.baseline_males = m;
        }
        if let Some(f) = self.simulate.baseline_females {
            spec.baseline_females = f;
        }
        if let Some(scale) = self.simulate.dispersion_scale {
            if !(scale > 0.0) {
                return Err(ConfigError(format!(
                    "simulate.dispersion_scale: must be > 0, got {scale}"
                )));
            }
            // Scaling every SD by c scales the covariances by c^2, so the
            // precisions scale by 1/c^2.
            let factor = 1.0 / (scale * scale);
            spec.precision_between = abp_core::linalg::SpdMatrix::new(
                spec.precision_between.entries() * factor,
            )
            .expect("scaled SPD");
            spec.precision_within =
                abp_core::linalg::SpdMatrix::new(spec.precision_within.entries() * factor)
                    .expect("scaled SPD");
        }
        if let Some(shifts) = &self.simulate.injection_shifts {
            spec.injection_shifts = shifts
                .iter()
                .map(|(name, delta)| (parse_marker(name).expect("validated"), *delta))
                .collect();
        }
        spec.seed = self.seed;
        spec.validate().map_err(|e| ConfigError(format!("simulate: {e}")))?;
        Ok(spec)
    }

    /// Canonical serialized form and its hash, for provenance.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serializable config")
    }
}

pub fn parse_marker(name: &str) -> Option<MarkerId> {
    MarkerId::from_column_name(name)
        .or_else(|| abp_core::markers::ALL_MARKERS.iter().copied().find(|m| m.display_name() == name))
}

/// Per-sex explicit prior means, e.g. supplied when no baseline is available.
pub type Mu0Overrides = BTreeMap<(abp_core::markers::Sex, MarkerId), f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_roundtrips() {
        let cfg = RunConfig {
            version: 1,
            seed: 42,
            threads: None,
            simulate: Default::default(),
            model: Default::default(),
            evaluate: Default::default(),
        };
        cfg.validate().unwrap();
        let text = cfg.resolved_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        back.validate().unwrap();
        assert_eq!(back.seed, 42);
    }

    #[test]
    fn bad_keys_are_named() {
        let text = "version = 1\nseed = 1\n[model]\nkind = \"quantum\"\nsubset = \"ratios\"\nrule = \"marginal\"\nalpha_level = 0.05\nexclude_flagged = true\nn_replicates = 2000\nscores = false\n";
        let cfg: RunConfig = toml::from_str(text).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.0.contains("model.kind"), "{err}");
        assert!(err.0.contains("quantum"), "{err}");
    }

    #[test]
    fn unknown_toml_field_rejected() {
        let text = "version = 1\nseed = 1\nbananas = 7\n";
        let err = toml::from_str::<RunConfig>(text).unwrap_err().to_string();
        assert!(err.contains("bananas"), "{err}");
    }

    #[test]
    fn marker_names_parse_both_ways() {
        assert_eq!(parse_marker("T_E"), Some(MarkerId::T_E));
        assert_eq!(parse_marker("T/E"), Some(MarkerId::T_E));
        assert_eq!(parse_marker("A5"), Some(MarkerId::A5));
        assert_eq!(parse_marker("XYZ"), None);
    }
}
