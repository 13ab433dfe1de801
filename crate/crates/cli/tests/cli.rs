//! End-to-end checks of the batch commands, run in-process through the
//! library surface plus a few process-level exit-code checks on the binary.

use std::path::Path;
use std::process::Command;

use abp_cli::{cmd_classify, cmd_evaluate, cmd_fit, cmd_simulate, RunConfig};
use abp_core::occ::{HpdDecision, RuleFired};

fn test_config(seed: u64) -> RunConfig {
    let text = format!(
        r#"
version = 1
seed = {seed}

[simulate]
preset = "benchmark"
normal = {{ athletes = 6, total_samples = 42 }}
abnormal = {{ athletes = 2, total_samples = 12, injected_samples = 3 }}
baseline_males = 12
baseline_females = 12

[model]
kind = "multivariate"
subset = "ratios"
rule = "marginal"
alpha_level = 0.05
exclude_flagged = true
n_replicates = 2000
scores = true

[model.gibbs]
total_iterations = 600
burn_in_fraction = 0.3333333333333333
thinning = 1
warm_iterations = 300

[evaluate]
grid = "paper"
oversample = true
svg = true
"#
    );
    toml::from_str(&text).unwrap()
}

fn read_decisions(dir: &Path) -> Vec<HpdDecision> {
    std::fs::read_to_string(dir.join("decisions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_string_lossy().to_string();
                files.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn simulate_outputs_and_determinism() {
    let cfg = test_config(11);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, a.path()).unwrap();
    cmd_simulate(&cfg, b.path()).unwrap();

    for f in ["cohort.csv", "baseline.csv", "truth.jsonl", "resolved_config.toml", "manifest.json"]
    {
        assert!(a.path().join(f).exists(), "{f} missing");
    }
    // Row counts match the requested sizes (header + 54 samples).
    let cohort = std::fs::read_to_string(a.path().join("cohort.csv")).unwrap();
    assert_eq!(cohort.lines().count(), 1 + 42 + 12);
    let baseline = std::fs::read_to_string(a.path().join("baseline.csv")).unwrap();
    assert_eq!(baseline.lines().count(), 1 + 24);
    let truth = std::fs::read_to_string(a.path().join("truth.jsonl")).unwrap();
    assert_eq!(truth.lines().count(), 3);

    // Same seed: byte-identical outputs.
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));

    // Different seed: different cohort.
    let mut cfg2 = test_config(12);
    cfg2.seed = 12;
    let c = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg2, c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join("cohort.csv")).unwrap(),
        std::fs::read(c.path().join("cohort.csv")).unwrap()
    );
}

#[test]
fn classify_rules_counts_and_alpha_nesting() {
    let cfg = test_config(21);
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();
    let cohort = dir.path().join("cohort.csv");
    let baseline = dir.path().join("baseline.csv");

    cmd_classify(&cfg, &cohort, &baseline, dir.path(), false).unwrap();
    let decisions = read_decisions(dir.path());
    // One record per input sample.
    assert_eq!(decisions.len(), 54);
    // The first sample of every athlete is judged by population thresholds.
    let mut seen = std::collections::BTreeSet::new();
    for d in &decisions {
        if seen.insert(d.athlete_id.clone()) {
            assert_eq!(d.rule_fired, RuleFired::PopulationThreshold, "{}", d.athlete_id);
        } else {
            assert_eq!(d.rule_fired, RuleFired::MarginalHpd);
        }
    }

    // alpha = 0.10 flags at least as many samples as alpha = 0.05.
    let mut cfg10 = test_config(21);
    cfg10.model.alpha_level = 0.10;
    let dir10 = tempfile::tempdir().unwrap();
    cmd_classify(&cfg10, &cohort, &baseline, dir10.path(), false).unwrap();
    let decisions10 = read_decisions(dir10.path());
    let flags = |ds: &[HpdDecision]| ds.iter().filter(|d| d.flagged).count();
    assert!(
        flags(&decisions10) >= flags(&decisions),
        "alpha 0.10 flagged {} < alpha 0.05 flagged {}",
        flags(&decisions10),
        flags(&decisions)
    );
}

#[test]
fn fit_diagnostics_and_resume_determinism() {
    let mut cfg = test_config(31);
    // The convergence check needs a realistically sized training fit: more
    // longitudinal athletes and a full-length chain.
    cfg.simulate.normal =
        Some(abp_cli::config::GroupToml { athletes: 30, total_samples: 240, injected_samples: 0 });
    cfg.simulate.dispersion_scale = Some(0.7);
    cfg.model.subset = "eaas".into();
    cfg.model.gibbs.total_iterations = 3000;
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();
    let cohort = dir.path().join("cohort.csv");
    let baseline = dir.path().join("baseline.csv");

    cmd_fit(&cfg, &cohort, &baseline, None, dir.path(), false).unwrap();
    for sex in ["male", "female"] {
        let diag = std::fs::read_to_string(dir.path().join(format!("diagnostics_{sex}.csv")))
            .unwrap();
        let mut lines = diag.lines();
        assert_eq!(lines.next(), Some("scalar,ess,split_rhat"));
        let mut n = 0;
        for line in lines {
            let rhat: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(rhat.is_finite() && rhat > 0.5, "bad rhat in {line}");
            n += 1;
        }
        // mu (6) + mu_j (6 per athlete) + three omega diagonals (18).
        assert!(n > 24, "only {n} scalars tracked");
    }

    // Resuming from the serialized chain twice gives identical outputs.
    let r1 = tempfile::tempdir().unwrap();
    let r2 = tempfile::tempdir().unwrap();
    cmd_fit(&cfg, &cohort, &baseline, Some(dir.path()), r1.path(), false).unwrap();
    cmd_fit(&cfg, &cohort, &baseline, Some(dir.path()), r2.path(), false).unwrap();
    assert_eq!(dir_bytes(r1.path()), dir_bytes(r2.path()));
    assert_ne!(
        std::fs::read(r1.path().join("chain_male.jsonl")).unwrap(),
        std::fs::read(dir.path().join("chain_male.jsonl")).unwrap(),
        "resumed chain must continue, not repeat"
    );
}

#[test]
fn evaluate_report_is_internally_consistent() {
    let cfg = test_config(41);
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();
    cmd_evaluate(
        &cfg,
        &dir.path().join("cohort.csv"),
        &dir.path().join("baseline.csv"),
        dir.path(),
        false,
    )
    .unwrap();

    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let mut lines = report.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("policy,variable,phase,g_mean"));
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        let g_mean: f64 = cells[3].parse().unwrap();
        let sens: f64 = cells[6].parse().unwrap();
        let spec: f64 = cells[7].parse().unwrap();
        let (tp, fp, tn, fn_): (u64, u64, u64, u64) = (
            cells[12].parse().unwrap(),
            cells[13].parse().unwrap(),
            cells[14].parse().unwrap(),
            cells[15].parse().unwrap(),
        );
        // The emitted metrics reproduce metrics() applied to the emitted
        // confusion matrix.
        let cm = abp_core::eval::ConfusionMatrix { tp, fp, tn, fn_ };
        let m = abp_core::eval::metrics(&cm);
        assert!((m.g_mean - g_mean).abs() < 5e-7, "{line}");
        assert!((m.sensitivity - sens).abs() < 5e-7);
        assert!((m.specificity - spec).abs() < 5e-7);
        // Post-oversampling rows are balanced: balanced accuracy equals
        // overall accuracy.
        if cells[2] == "post" {
            let ba: f64 = cells[8].parse().unwrap();
            let acc: f64 = cells[9].parse().unwrap();
            assert!((ba - acc).abs() < 1e-9, "{line}");
        }
        rows += 1;
    }
    // 14 policies, pre + post each.
    assert_eq!(rows, 28);
    assert!(dir.path().join("roc.svg").exists());
    assert!(dir.path().join("curves/roc_mba_ratios.csv").exists());
}

#[test]
fn perfect_classifier_row_on_gross_injections() {
    // One doped athlete with huge, unmissable shifts and clean histories:
    // every injected sample is caught with nothing false-flagged.
    let text = r#"
version = 1
seed = 7

[simulate]
preset = "benchmark"
normal = { athletes = 0, total_samples = 0 }
abnormal = { athletes = 1, total_samples = 6, injected_samples = 2 }
baseline_males = 12
baseline_females = 12
dispersion_scale = 0.4
injection_shifts = [["T", 6.0], ["A5", 6.0]]

[model]
kind = "univariate"
subset = "T/E"
rule = "marginal"
alpha_level = 0.05
exclude_flagged = true
n_replicates = 2000
scores = true

[evaluate]
grid = "single"
oversample = false
svg = false
"#;
    let cfg: RunConfig = toml::from_str(text).unwrap();
    cfg.validate().unwrap();
    let dir = tempfile::tempdir().unwrap();
    cmd_simulate(&cfg, dir.path()).unwrap();
    cmd_evaluate(
        &cfg,
        &dir.path().join("cohort.csv"),
        &dir.path().join("baseline.csv"),
        dir.path(),
        false,
    )
    .unwrap();
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let row = report.lines().nth(1).unwrap();
    let cells: Vec<&str> = row.split(',').collect();
    for idx in 3..=9 {
        let v: f64 = cells[idx].parse().unwrap();
        assert_eq!(v, 1.0, "column {idx} in {row}");
    }
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_abp");
    // Missing config: exit 2.
    let out = Command::new(exe)
        .args(["simulate", "--config", "/definitely/not/here.toml", "--out", "/tmp/abp-x"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Malformed config naming the offending key: exit 2.
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "version = 1\nseed = 3\n[model]\nkind = \"psychic\"\nsubset = \"ratios\"\nrule = \"marginal\"\nalpha_level = 0.05\nexclude_flagged = true\nn_replicates = 100\nscores = false\n").unwrap();
    let out = Command::new(exe)
        .args(["simulate", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("model.kind"), "stderr: {stderr}");

    // Runtime failure (missing cohort file): exit 1.
    let good = dir.path().join("good.toml");
    std::fs::write(&good, "version = 1\nseed = 3\n").unwrap();
    let out = Command::new(exe)
        .args(["classify", "--config"])
        .arg(&good)
        .args(["--out"])
        .arg(dir.path().join("out2"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Usage error: exit 2 (clap).
    let out = Command::new(exe).args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
