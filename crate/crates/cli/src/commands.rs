//! The four batch commands: simulate, fit, classify, evaluate. Every command
//! writes its outputs plus the resolved config and a manifest naming the
//! config hash and seed that produced each file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use abp_core::cohort::simulate_cohort;
use abp_core::csv_io::{
    ingest_baseline_csv, ingest_cohort_csv, write_baseline_csv, write_cohort_csv, CsvSchema,
};
use abp_core::eval::{metrics, pr_curve, roc_curve, score, ConfusionMatrix, Curve, MetricsReport};
use abp_core::markers::Sex;
use abp_core::multivariate::{run_gibbs, run_gibbs_from, MvChain, MvData, MvPrior};
use abp_core::occ::{
    binarize_label, classify_sequence, random_oversample, write_decisions, BinaryLabel,
    ClassifierPolicy, DecisionRule, HpdDecision, MarkerSubset, ModelContext, ModelKind,
    PopulationThresholds,
};
use abp_core::profile::{AthleteSeries, Label, ProfileCollection};
use abp_core::rng::{stream_id, stream_rng, StreamDomain};
use abp_core::univariate::posterior_update;
use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Collects outputs and emits `manifest.json` listing every file with its
/// hash, plus the provenance pair (config hash, seed).
pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
    seed: u64,
    files: BTreeMap<String, (usize, String)>,
}

impl OutputDir {
    pub fn create(dir: &Path, cfg: &RunConfig) -> Result<OutputDir> {
        fs::create_dir_all(dir)
            .with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let resolved = cfg.resolved_toml();
        let config_hash = short_hash(resolved.as_bytes());
        let mut out = OutputDir {
            dir: dir.to_path_buf(),
            config_hash,
            seed: cfg.seed,
            files: BTreeMap::new(),
        };
        out.write("resolved_config.toml", resolved.as_bytes())?;
        Ok(out)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.insert(name.to_string(), (bytes.len(), short_hash(bytes)));
        Ok(())
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn finish(mut self) -> Result<()> {
        let mut manifest = String::new();
        let _ = writeln!(manifest, "{{");
        let _ = writeln!(manifest, "  \"config_hash\": \"{}\",", self.config_hash);
        let _ = writeln!(manifest, "  \"seed\": {},", self.seed);
        let _ = writeln!(manifest, "  \"files\": [");
        let n = self.files.len();
        for (i, (name, (bytes, sha))) in self.files.iter().enumerate() {
            let _ = writeln!(
                manifest,
                "    {{\"name\": \"{name}\", \"bytes\": {bytes}, \"sha256\": \"{sha}\"}}{}",
                if i + 1 < n { "," } else { "" }
            );
        }
        let _ = writeln!(manifest, "  ]");
        let _ = writeln!(manifest, "}}");
        let path = self.dir.join("manifest.json");
        fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
        self.files.clear();
        Ok(())
    }
}

fn short_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Simulate a cohort: `cohort.csv`, `baseline.csv` and the injected-sample
/// ground truth as `truth.jsonl`.
pub fn cmd_simulate(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    let spec = cfg.cohort_spec()?;
    let (collection, injections) = simulate_cohort(&spec)?;
    let schema = CsvSchema::default();

    let mut out = OutputDir::create(out_dir, cfg)?;
    let mut cohort_bytes = Vec::new();
    write_cohort_csv(&collection, &schema, &mut cohort_bytes)?;
    out.write("cohort.csv", &cohort_bytes)?;

    let mut baseline_bytes = Vec::new();
    write_baseline_csv(&collection.population_baseline, &schema, &mut baseline_bytes)?;
    out.write("baseline.csv", &baseline_bytes)?;

    let mut truth = Vec::new();
    for record in &injections {
        serde_json::to_writer(&mut truth, record)?;
        truth.push(b'\n');
    }
    out.write("truth.jsonl", &truth)?;
    out.finish()?;
    eprintln!(
        "simulated {} athletes / {} samples ({} injected), baseline {}",
        collection.athletes.len(),
        collection.total_samples(),
        injections.len(),
        collection.population_baseline.len()
    );
    Ok(())
}

pub fn load_collection(
    cohort_path: &Path,
    baseline_path: &Path,
    verbose: bool,
) -> Result<ProfileCollection> {
    let schema = CsvSchema::default();
    let cohort_file = fs::File::open(cohort_path)
        .with_context(|| format!("cannot open cohort file {}", cohort_path.display()))?;
    let report = ingest_cohort_csv(std::io::BufReader::new(cohort_file), &schema)?;
    if !report.rejects.is_empty() {
        eprintln!("warning: {} rows rejected during ingest", report.rejects.len());
        if verbose {
            for r in &report.rejects {
                eprintln!("  line {}: {}", r.line, r.reason);
            }
        }
    }
    let mut collection = report.collection;
    let baseline_file = fs::File::open(baseline_path)
        .with_context(|| format!("cannot open baseline file {}", baseline_path.display()))?;
    collection.population_baseline =
        ingest_baseline_csv(std::io::BufReader::new(baseline_file), &schema)?;
    Ok(collection)
}

/// Athletes whose labeled samples are all normal form the training pool.
fn training_pool(collection: &ProfileCollection) -> Vec<AthleteSeries> {
    collection
        .athletes
        .iter()
        .filter(|a| a.samples.iter().all(|s| s.true_label == Some(Label::Normal)))
        .cloned()
        .collect()
}

fn build_context(
    cfg: &RunConfig,
    policy: ClassifierPolicy,
    collection: &ProfileCollection,
) -> Result<ModelContext> {
    let training = training_pool(collection);
    Ok(ModelContext::new(
        policy,
        PopulationThresholds::defaults(),
        cfg.univariate_config(),
        cfg.gibbs_config(),
        cfg.seed,
        &collection.population_baseline,
        &training,
        &BTreeMap::new(),
    )?)
}

fn classify_all(
    ctx: &ModelContext,
    collection: &ProfileCollection,
) -> Result<Vec<Vec<HpdDecision>>> {
    collection
        .athletes
        .par_iter()
        .enumerate()
        .map(|(i, athlete)| Ok(classify_sequence(athlete, i as u32, ctx)?))
        .collect()
}

/// Fit the configured model on the training pool and serialize per-sex
/// chains (multivariate) or per-athlete conjugate posteriors (univariate),
/// plus convergence diagnostics.
pub fn cmd_fit(
    cfg: &RunConfig,
    cohort_path: &Path,
    baseline_path: &Path,
    resume_dir: Option<&Path>,
    out_dir: &Path,
    verbose: bool,
) -> Result<()> {
    let collection = load_collection(cohort_path, baseline_path, verbose)?;
    let mut out = OutputDir::create(out_dir, cfg)?;
    match cfg.model_kind()? {
        ModelKind::Multivariate => {
            fit_multivariate(cfg, &collection, resume_dir, &mut out)?;
        }
        ModelKind::Univariate => fit_univariate(cfg, &collection, &mut out)?,
    }
    out.finish()
}

fn fit_multivariate(
    cfg: &RunConfig,
    collection: &ProfileCollection,
    resume_dir: Option<&Path>,
    out: &mut OutputDir,
) -> Result<()> {
    let markers = cfg.marker_subset()?.markers();
    let training = training_pool(collection);
    let moments =
        abp_core::cohort::estimate_baseline_moments(&collection.population_baseline, &markers)?;
    for sex in [Sex::Male, Sex::Female] {
        let Some(m) = moments.get(&sex) else { continue };
        let mut groups: Vec<Vec<nalgebra::DVector<f64>>> = Vec::new();
        for b in collection.population_baseline.iter().filter(|b| b.sex == sex) {
            groups.push(vec![b.log_vector(&markers)?.log_values().clone()]);
        }
        for athlete in training.iter().filter(|a| a.sex == sex) {
            let series: Result<Vec<_>, _> = athlete
                .samples
                .iter()
                .map(|s| {
                    abp_core::profile::log_transform(&s.substituted()?, &markers)
                        .map(|v| v.log_values().clone())
                })
                .collect();
            groups.push(series?);
        }
        if groups.is_empty() {
            continue;
        }
        let data = MvData::new(groups)?;
        let prior = MvPrior::default_for(m.mean.clone());
        let gibbs = cfg.gibbs_config();
        let mut rng = stream_rng(cfg.seed, stream_id(StreamDomain::Fit, sex as u32, 0));
        let chain = match resume_dir {
            Some(dir) => {
                let path = dir.join(format!("chain_{}.jsonl", sex.as_str()));
                let file = fs::File::open(&path)
                    .with_context(|| format!("cannot open chain {}", path.display()))?;
                let prev = MvChain::read(std::io::BufReader::new(file))?;
                run_gibbs_from(&data, &prior, &gibbs.warm_config(), prev.last_state().clone(), &mut rng)?
            }
            None => run_gibbs(&data, &prior, &gibbs, &mut rng)?,
        };
        let mut chain_bytes = Vec::new();
        chain.write(&mut chain_bytes)?;
        out.write(&format!("chain_{}.jsonl", sex.as_str()), &chain_bytes)?;

        let mut diag = String::from("scalar,ess,split_rhat\n");
        for d in chain.diagnostics() {
            let _ = writeln!(diag, "{},{},{}", d.name, d.ess, d.split_rhat);
        }
        out.write(&format!("diagnostics_{}.csv", sex.as_str()), diag.as_bytes())?;
        eprintln!(
            "fitted {} chain: {} athletes, {} retained states",
            sex.as_str(),
            data.n_athletes(),
            chain.retained()
        );
    }
    Ok(())
}

fn fit_univariate(
    cfg: &RunConfig,
    collection: &ProfileCollection,
    out: &mut OutputDir,
) -> Result<()> {
    let markers = cfg.marker_subset()?.markers();
    let uni = cfg.univariate_config();
    let moments =
        abp_core::cohort::estimate_baseline_moments(&collection.population_baseline, &markers)?;
    let mut table = String::from("athlete_id,sex,marker,n,mu,kappa,alpha,beta\n");
    for athlete in training_pool(collection) {
        let Some(m) = moments.get(&athlete.sex) else { continue };
        for (k, marker) in markers.iter().enumerate() {
            let mut history = Vec::new();
            for s in &athlete.samples {
                let v = abp_core::profile::log_transform(&s.substituted()?, &markers)?;
                history.push(v.log_values()[k]);
            }
            let posterior = posterior_update(&uni.prior(m.mean[k])?, &history);
            let _ = writeln!(
                table,
                "{},{},{},{},{},{},{},{}",
                athlete.athlete_id,
                athlete.sex.as_str(),
                marker.column_name(),
                history.len(),
                posterior.mu,
                posterior.kappa,
                posterior.alpha,
                posterior.beta
            );
        }
    }
    out.write("univariate_params.csv", table.as_bytes())?;
    Ok(())
}

/// Classify every athlete sequentially and export the decision records.
pub fn cmd_classify(
    cfg: &RunConfig,
    cohort_path: &Path,
    baseline_path: &Path,
    out_dir: &Path,
    verbose: bool,
) -> Result<()> {
    let collection = load_collection(cohort_path, baseline_path, verbose)?;
    let ctx = build_context(cfg, cfg.policy()?, &collection)?;
    let decisions = classify_all(&ctx, &collection)?;
    let mut out = OutputDir::create(out_dir, cfg)?;
    let flat: Vec<HpdDecision> = decisions.into_iter().flatten().collect();
    let mut bytes = Vec::new();
    write_decisions(&flat, &mut bytes)?;
    out.write("decisions.jsonl", &bytes)?;
    out.finish()?;
    eprintln!("classified {} samples", flat.len());
    Ok(())
}

struct PolicyRow {
    policy: &'static str,
    variable: String,
    phase: &'static str,
    cm: ConfusionMatrix,
    metrics: MetricsReport,
    roc: Option<Curve>,
    pr: Option<Curve>,
}

fn policy_grid(cfg: &RunConfig) -> Result<Vec<(&'static str, ClassifierPolicy)>> {
    let mut grid = Vec::new();
    match cfg.evaluate.grid.as_str() {
        "single" => {
            let kind = cfg.model_kind()?;
            let name = match kind {
                ModelKind::Univariate => "univariate",
                ModelKind::Multivariate => "mba",
            };
            grid.push((name, cfg.policy()?));
        }
        _ => {
            let base = cfg.policy()?;
            for marker in abp_core::markers::ALL_MARKERS {
                let mut p = ClassifierPolicy::new(
                    ModelKind::Univariate,
                    MarkerSubset::Single(marker),
                    DecisionRule::Marginal,
                );
                p.alpha_level = base.alpha_level;
                p.exclude_flagged = base.exclude_flagged;
                p.n_replicates = base.n_replicates;
                p.score_grid = base.score_grid.clone();
                grid.push(("univariate", p));
            }
            for subset in [MarkerSubset::Eaas, MarkerSubset::Ratios, MarkerSubset::All] {
                let mut p =
                    ClassifierPolicy::new(ModelKind::Multivariate, subset, DecisionRule::Marginal);
                p.alpha_level = base.alpha_level;
                p.exclude_flagged = base.exclude_flagged;
                p.n_replicates = base.n_replicates;
                p.score_grid = base.score_grid.clone();
                grid.push(("mba", p));
            }
        }
    }
    Ok(grid)
}

/// Run the policy grid, score decisions against labels, and emit the report
/// table, curve points and optional SVG plots.
pub fn cmd_evaluate(
    cfg: &RunConfig,
    cohort_path: &Path,
    baseline_path: &Path,
    out_dir: &Path,
    verbose: bool,
) -> Result<()> {
    let collection = load_collection(cohort_path, baseline_path, verbose)?;
    let grid = policy_grid(cfg)?;
    let mut out = OutputDir::create(out_dir, cfg)?;

    let results: Vec<(usize, Vec<PolicyRow>, Vec<HpdDecision>)> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, (name, policy))| -> Result<_> {
            let rows = evaluate_policy(cfg, name, policy.clone(), idx, &collection)?;
            Ok((idx, rows.0, rows.1))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = String::from(
        "policy,variable,phase,g_mean,f1,precision,sensitivity,specificity,balanced_accuracy,\
         overall_accuracy,accuracy_ci_lo,accuracy_ci_hi,tp,fp,tn,fn,roc_auc,pr_auc,degenerate\n",
    );
    let fmt = |v: f64| format!("{:.6}", v);
    let mut svg_curves_roc: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut svg_curves_pr: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for (_, rows, _) in &results {
        for row in rows {
            let auc = |c: &Option<Curve>| c.as_ref().map(|c| fmt(c.auc)).unwrap_or_default();
            let m = &row.metrics;
            let _ = writeln!(
                report,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                row.policy,
                row.variable,
                row.phase,
                fmt(m.g_mean),
                fmt(m.f1),
                fmt(m.precision),
                fmt(m.sensitivity),
                fmt(m.specificity),
                fmt(m.balanced_accuracy),
                fmt(m.overall_accuracy),
                fmt(m.accuracy_ci_lo),
                fmt(m.accuracy_ci_hi),
                row.cm.tp,
                row.cm.fp,
                row.cm.tn,
                row.cm.fn_,
                auc(&row.roc),
                auc(&row.pr),
                row.metrics.degenerate,
            );
            if row.phase == "pre" {
                let tag = format!("{}_{}", row.policy, sanitize(&row.variable));
                if let Some(c) = &row.roc {
                    out.write(&format!("curves/roc_{tag}.csv"), curve_csv(c).as_bytes())?;
                    if row.policy == "mba" {
                        svg_curves_roc.push((row.variable.clone(), c.points.clone()));
                    }
                }
                if let Some(c) = &row.pr {
                    out.write(&format!("curves/pr_{tag}.csv"), curve_csv(c).as_bytes())?;
                    if row.policy == "mba" {
                        svg_curves_pr.push((row.variable.clone(), c.points.clone()));
                    }
                }
            }
        }
    }
    out.write("report.csv", report.as_bytes())?;

    if cfg.evaluate.svg {
        if !svg_curves_roc.is_empty() {
            let curves: Vec<(String, &[(f64, f64)])> =
                svg_curves_roc.iter().map(|(l, p)| (l.clone(), p.as_slice())).collect();
            out.write(
                "roc.svg",
                abp_core::eval::svg::curves_svg("ROC", "false positive rate", "sensitivity", &curves)
                    .as_bytes(),
            )?;
        }
        if !svg_curves_pr.is_empty() {
            let curves: Vec<(String, &[(f64, f64)])> =
                svg_curves_pr.iter().map(|(l, p)| (l.clone(), p.as_slice())).collect();
            out.write(
                "pr.svg",
                abp_core::eval::svg::curves_svg("Precision-Recall", "recall", "precision", &curves)
                    .as_bytes(),
            )?;
        }
        write_series_svg(&collection, &results, &mut out)?;
    }
    out.finish()?;
    eprintln!("evaluated {} policies over {} samples", grid.len(), collection.total_samples());
    Ok(())
}

fn evaluate_policy(
    cfg: &RunConfig,
    name: &'static str,
    policy: ClassifierPolicy,
    policy_idx: usize,
    collection: &ProfileCollection,
) -> Result<(Vec<PolicyRow>, Vec<HpdDecision>)> {
    let variable = policy.marker_subset.label();
    let ctx = build_context(cfg, policy, collection)?;
    let per_athlete = classify_all(&ctx, collection)?;

    let mut decisions: Vec<HpdDecision> = Vec::new();
    let mut labels: Vec<bool> = Vec::new();
    for (athlete, ds) in collection.athletes.iter().zip(&per_athlete) {
        for (sample, d) in athlete.samples.iter().zip(ds) {
            labels.push(binarize_label(sample.true_label)? == BinaryLabel::NonNormal);
            decisions.push(d.clone());
        }
    }
    let flags: Vec<bool> = decisions.iter().map(|d| d.flagged).collect();
    let cm = score(&flags, &labels)?;
    let scores: Option<Vec<f64>> =
        decisions.iter().map(|d| d.suspicion_score).collect::<Option<Vec<_>>>();
    let (roc, pr) = match &scores {
        Some(s) if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) => {
            (Some(roc_curve(s, &labels)?), Some(pr_curve(s, &labels)?))
        }
        _ => (None, None),
    };
    let mut rows = vec![PolicyRow {
        policy: name,
        variable: variable.clone(),
        phase: "pre",
        cm,
        metrics: metrics(&cm),
        roc,
        pr,
    }];

    if cfg.evaluate.oversample {
        let mut rng =
            stream_rng(cfg.seed, stream_id(StreamDomain::Oversample, policy_idx as u32, 0));
        let idx = random_oversample(&labels, &mut rng)?;
        let over_flags: Vec<bool> = idx.iter().map(|&i| flags[i]).collect();
        let over_labels: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
        let cm_post = score(&over_flags, &over_labels)?;
        rows.push(PolicyRow {
            policy: name,
            variable,
            phase: "post",
            cm: cm_post,
            metrics: metrics(&cm_post),
            roc: None,
            pr: None,
        });
    }
    Ok((rows, decisions))
}

/// Limit-band series plot for the first athlete carrying a non-normal label,
/// drawn from the first policy whose subset contains that marker.
fn write_series_svg(
    collection: &ProfileCollection,
    results: &[(usize, Vec<PolicyRow>, Vec<HpdDecision>)],
    out: &mut OutputDir,
) -> Result<()> {
    let Some((_, _, decisions)) = results.first() else { return Ok(()) };
    let Some(athlete) = collection
        .athletes
        .iter()
        .find(|a| a.samples.iter().any(|s| s.true_label != Some(Label::Normal)))
        .or_else(|| collection.athletes.first())
    else {
        return Ok(());
    };
    let athlete_decisions: Vec<&HpdDecision> =
        decisions.iter().filter(|d| d.athlete_id == athlete.athlete_id).collect();
    if athlete_decisions.is_empty() {
        return Ok(());
    }
    let marker = athlete_decisions[0].markers[0];
    let mut values = Vec::new();
    for s in &athlete.samples {
        let v = abp_core::profile::log_transform(&s.substituted()?, &[marker])?;
        values.push(v.log_values()[0]);
    }
    let limits: Vec<abp_core::hpd::Interval> =
        athlete_decisions.iter().map(|d| d.intervals[0]).collect();
    let flagged: Vec<bool> = athlete_decisions.iter().map(|d| d.flagged).collect();
    let svg = abp_core::eval::svg::series_band_svg(
        &format!("{} series, athlete {}", marker.display_name(), athlete.athlete_id),
        &values,
        &limits,
        &flagged,
    );
    out.write(&format!("series_{}.svg", sanitize(marker.column_name())), svg.as_bytes())
}

fn curve_csv(curve: &Curve) -> String {
    let mut s = String::from("x,y\n");
    for (x, y) in &curve.points {
        let _ = writeln!(s, "{x},{y}");
    }
    let _ = writeln!(s, "# auc,{}", curve.auc);
    s
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_alphanumeric() { c } else { '_' }).collect()
}

/// Shared error-to-exit-code mapping: config errors exit 2, runtime errors 1.
pub fn exit_code_for(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<crate::config::ConfigError>().is_some() {
        2
    } else {
        1
    }
}

pub fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("input file {} does not exist", path.display());
    }
    Ok(())
}
