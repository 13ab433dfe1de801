//! Scratch probe: flag-rate calibration and refit cost of the multivariate
//! sequential classifier on a null cohort.

use std::collections::BTreeMap;
use std::time::Instant;

use abp_core::cohort::{simulate_cohort, CohortSpec, GroupSpec};
use abp_core::multivariate::{GibbsConfig, WarmPhase};
use abp_core::occ::{
    classify_sequence, ClassifierPolicy, DecisionRule, MarkerSubset, ModelContext, ModelKind,
    PopulationThresholds,
};
use abp_core::univariate::UnivariateConfig;

fn main() {
    if std::env::args().nth(1).as_deref() == Some("fitcheck") {
        return fitcheck();
    }
    if std::env::args().nth(1).as_deref() == Some("rhatcli") {
        return rhat_cli();
    }
    if std::env::args().nth(1).as_deref() == Some("rhat") {
        return rhat_probe();
    }
    if std::env::args().nth(1).as_deref() == Some("crit6") {
        return crit6();
    }
    if std::env::args().nth(1).as_deref() == Some("predcheck") {
        return predcheck();
    }
    if std::env::args().nth(1).as_deref() == Some("momcheck") {
        return momcheck();
    }
    if std::env::args().nth(1).as_deref() == Some("hpdbias") {
        return hpdbias();
    }
    let subset = match std::env::args().nth(1).as_deref() {
        Some("eaas") => MarkerSubset::Eaas,
        Some("all") => MarkerSubset::All,
        _ => MarkerSubset::Ratios,
    };
    let athletes: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(40);

    let mut spec = CohortSpec::benchmark(77);
    spec.normal = GroupSpec { athletes, total_samples: athletes * 8, injected_samples: 0 };
    spec.abnormal = GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 };
    let (cohort, _) = simulate_cohort(&spec).unwrap();

    let mut policy =
        ClassifierPolicy::new(ModelKind::Multivariate, subset, DecisionRule::Marginal)
            .without_scores();
    policy.n_replicates = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let warm_iters: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(450);
    let gibbs = GibbsConfig {
        total_iterations: 1200,
        burn_in_fraction: 1.0 / 3.0,
        thinning: 1,
        seed: 0,
        warm: (warm_iters > 0).then_some(WarmPhase { total_iterations: warm_iters, burn_in_fraction: 1.0 / 3.0 }),
    };
    let training: Vec<_> = cohort.athletes.clone();
    let ctx = ModelContext::new(
        policy,
        PopulationThresholds::defaults(),
        UnivariateConfig::default(),
        gibbs,
        42,
        &cohort.population_baseline,
        &training,
        &BTreeMap::new(),
    )
    .unwrap();

    let start = Instant::now();
    let mut flags = 0usize;
    let mut total = 0usize;
    let mut threshold_flags = 0usize;
    let k_dim = ctx.markers().len();
    let mut marker_miss = vec![0usize; k_dim];
    let mut widths = vec![0.0f64; k_dim];
    let mut by_history: std::collections::BTreeMap<usize, (usize, usize)> = Default::default();
    for (i, athlete) in cohort.athletes.iter().enumerate() {
        let decisions = classify_sequence(athlete, i as u32, &ctx).unwrap();
        threshold_flags += usize::from(decisions[0].flagged);
        for d in &decisions[1..] {
            total += 1;
            flags += usize::from(d.flagged);
            for (k, &o) in d.outside.iter().enumerate() {
                marker_miss[k] += usize::from(o);
                widths[k] += d.intervals[k].width();
            }
            let e = by_history.entry(d.training_n).or_insert((0, 0));
            e.0 += usize::from(d.flagged);
            e.1 += 1;
        }
    }
    let elapsed = start.elapsed();
    println!(
        "per-marker miss: {:?}",
        marker_miss.iter().map(|&m| (m as f64 / total as f64 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    println!(
        "mean widths:     {:?}",
        widths.iter().map(|w| (w / total as f64 * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    println!("flag rate by training_n: {:?}", by_history.iter().map(|(n, (f, t))| (*n, (*f as f64 / *t as f64 * 100.0).round() / 100.0)).collect::<Vec<_>>());
    let k = ctx.markers().len();
    println!(
        "subset K={k}: {total} model decisions, flag rate {:.4} (bracket [0.05, {:.4}]), \
         first-sample threshold flags {threshold_flags}/{}, {:.2?} total, {:.1} ms/decision",
        flags as f64 / total as f64,
        1.0 - 0.95f64.powi(k as i32),
        cohort.athletes.len(),
        elapsed,
        elapsed.as_secs_f64() * 1000.0 / total as f64,
    );
}

/// Fit once on (training + baseline + 4-sample athlete) and compare fitted
/// variance components against the generating truth, on the ratios subset.
fn fitcheck() {
    use abp_core::multivariate::{run_gibbs, MvData, MvPrior};
    use abp_core::profile::log_transform;
    use abp_core::rng::{stream_rng};
    use nalgebra::{DMatrix, DVector};

    let mut spec = CohortSpec::benchmark(77);
    spec.normal = GroupSpec { athletes: 40, total_samples: 320, injected_samples: 0 };
    spec.abnormal = GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 };
    let (cohort, _) = simulate_cohort(&spec).unwrap();
    let markers = MarkerSubset::Ratios.markers();

    // True covariances of the ratio subset: ratios = B * concentrations.
    let mut b = DMatrix::<f64>::zeros(5, 6);
    for (r, ratio) in markers.iter().enumerate() {
        let (num, den) = ratio.ratio_parts().unwrap();
        b[(r, num.canonical_index())] = 1.0;
        b[(r, den.canonical_index())] = -1.0;
    }
    let cov_e_conc = spec.precision_within.inverse().unwrap();
    let cov_b_conc = spec.precision_between.inverse().unwrap();
    let true_e = &b * cov_e_conc.entries() * b.transpose();
    let true_b = &b * cov_b_conc.entries() * b.transpose();

    // Training data: males only for a single-sex fit.
    let mut groups: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut mu0 = DVector::zeros(5);
    let mut n0 = 0.0;
    for bl in cohort.population_baseline.iter().filter(|b| b.sex == abp_core::markers::Sex::Male) {
        let v = bl.log_vector(&markers).unwrap();
        mu0 += v.log_values();
        n0 += 1.0;
        groups.push(vec![v.log_values().clone()]);
    }
    mu0 /= n0;
    for a in cohort.athletes.iter().filter(|a| a.sex == abp_core::markers::Sex::Male) {
        let series: Vec<DVector<f64>> = a
            .samples
            .iter()
            .map(|s| log_transform(&s.substituted().unwrap(), &markers).unwrap().log_values().clone())
            .collect();
        groups.push(series);
    }
    let data = MvData::new(groups).unwrap();
    let prior = MvPrior::default_for(mu0);
    let t: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1500);
    let fit_seed: u64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(1);
    let cfg = GibbsConfig { total_iterations: t, burn_in_fraction: 1.0/3.0, thinning: 1, seed: 0, warm: None };
    let chain = run_gibbs(&data, &prior, &cfg, &mut stream_rng(fit_seed, 0)).unwrap();

    let mut mean_cov_e = DMatrix::<f64>::zeros(5, 5);
    let mut mean_cov_b = DMatrix::<f64>::zeros(5, 5);
    for s in &chain.states {
        mean_cov_e += s.omega_e.inverse().unwrap().entries();
        mean_cov_b += s.omega_b.inverse().unwrap().entries();
    }
    mean_cov_e /= chain.states.len() as f64;
    mean_cov_b /= chain.states.len() as f64;
    let show = |label: &str, fitted: &DMatrix<f64>, truth: &DMatrix<f64>| {
        let fd: Vec<f64> = (0..5).map(|k| (fitted[(k,k)] * 100.0).round() / 100.0).collect();
        let td: Vec<f64> = (0..5).map(|k| (truth[(k,k)] * 100.0).round() / 100.0).collect();
        println!("{label}: fitted diag {fd:?} vs true {td:?}");
    };
    show("cov_e", &mean_cov_e, &true_e);
    show("cov_b", &mean_cov_b, &true_b);
}

/// Coverage of the shortest-window HPD estimator itself at n replicates.
fn hpdbias() {
    use abp_core::hpd::hpd_interval;
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = abp_core::rng::stream_rng(5, 0);
    for n in [1000usize, 2000, 4000, 8000] {
        let mut miss = 0usize;
        let trials = 2000;
        for _ in 0..trials {
            let reps: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let iv = hpd_interval(&reps, 0.05).unwrap();
            let fresh: f64 = rng.sample(StandardNormal);
            if !iv.contains(fresh) {
                miss += 1;
            }
        }
        println!("n={n}: miss rate {:.4}", miss as f64 / trials as f64);
    }
}

/// Method-of-moments check on the generated data itself.
fn momcheck() {
    use abp_core::profile::log_transform;
    use nalgebra::DVector;

    let mut spec = CohortSpec::benchmark(77);
    spec.normal = GroupSpec { athletes: 400, total_samples: 3200, injected_samples: 0 };
    spec.abnormal = GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 };
    let (cohort, _) = simulate_cohort(&spec).unwrap();
    let markers = MarkerSubset::Ratios.markers();
    let males: Vec<Vec<DVector<f64>>> = cohort
        .athletes
        .iter()
        .filter(|a| a.sex == abp_core::markers::Sex::Male)
        .map(|a| {
            a.samples
                .iter()
                .map(|s| log_transform(&s.substituted().unwrap(), &markers).unwrap().log_values().clone())
                .collect()
        })
        .collect();
    let k = markers.len();
    let mut within = vec![0.0f64; k];
    let mut wdf = 0.0;
    let mut means: Vec<DVector<f64>> = Vec::new();
    for series in &males {
        let n = series.len() as f64;
        let mut mean = DVector::zeros(k);
        for v in series {
            mean += v;
        }
        mean /= n;
        for v in series {
            for j in 0..k {
                within[j] += (v[j] - mean[j]).powi(2);
            }
        }
        wdf += n - 1.0;
        means.push(mean);
    }
    let within: Vec<f64> = within.iter().map(|w| (w / wdf * 100.0).round() / 100.0).collect();
    let mm = {
        let mut grand = DVector::zeros(k);
        for m in &means {
            grand += m;
        }
        grand /= means.len() as f64;
        let mut v = vec![0.0f64; k];
        for m in &means {
            for j in 0..k {
                v[j] += (m[j] - grand[j]).powi(2);
            }
        }
        // Between-athlete mean variance minus within/n correction (n = 8).
        v.iter()
            .map(|x| ((x / (means.len() as f64 - 1.0)) * 100.0).round() / 100.0)
            .collect::<Vec<f64>>()
    };
    println!("empirical within diag:  {within:?}");
    println!("empirical between diag (incl. within/8): {mm:?}");
}

/// Core calibration of the singleton-athlete predictive, oracle-style: fit
/// the hierarchy once on training data, then for fresh athletes construct
/// the n=1 predictive state-by-state and check next-sample coverage.
fn predcheck() {
    use abp_core::linalg::{cholesky_lower, solve_spd_with_factor};
    use abp_core::multivariate::{marginal_hpds, run_gibbs, MvData, MvPrior};
    use abp_core::profile::log_transform;
    use abp_core::rng::stream_rng;
    use abp_core::sampling::sample_mvn_with_precision_factor;
    use nalgebra::DVector;

    let n_reps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let mut spec = CohortSpec::benchmark(77);
    spec.normal = GroupSpec { athletes: 40, total_samples: 320, injected_samples: 0 };
    spec.abnormal = GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 };
    let (cohort, _) = simulate_cohort(&spec).unwrap();
    let markers = MarkerSubset::Ratios.markers();
    let k = markers.len();

    let mut groups: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut mu0 = DVector::zeros(k);
    let mut n0 = 0.0;
    for bl in cohort.population_baseline.iter().filter(|b| b.sex == abp_core::markers::Sex::Male) {
        let v = bl.log_vector(&markers).unwrap();
        mu0 += v.log_values();
        n0 += 1.0;
        groups.push(vec![v.log_values().clone()]);
    }
    mu0 /= n0;
    for a in cohort.athletes.iter().filter(|a| a.sex == abp_core::markers::Sex::Male) {
        groups.push(
            a.samples
                .iter()
                .map(|s| log_transform(&s.substituted().unwrap(), &markers).unwrap().log_values().clone())
                .collect(),
        );
    }
    let data = MvData::new(groups).unwrap();
    let prior = MvPrior::default_for(mu0.clone());
    let cfg = GibbsConfig { total_iterations: 1200, burn_in_fraction: 1.0 / 3.0, thinning: 1, seed: 0, warm: None };
    let chain = run_gibbs(&data, &prior, &cfg, &mut stream_rng(2, 0)).unwrap();

    // Truth for new athletes (ratio map of the concentration model).
    let mut bmat = nalgebra::DMatrix::<f64>::zeros(5, 6);
    for (r, ratio) in markers.iter().enumerate() {
        let (num, den) = ratio.ratio_parts().unwrap();
        bmat[(r, num.canonical_index())] = 1.0;
        bmat[(r, den.canonical_index())] = -1.0;
    }
    let cov_b = &bmat * spec.precision_between.inverse().unwrap().entries() * bmat.transpose();
    let cov_e = &bmat * spec.precision_within.inverse().unwrap().entries() * bmat.transpose();
    let true_mean = &bmat * DVector::from_vec(spec.log_means_male.clone());
    let lb = cholesky_lower(&cov_b).unwrap();
    let le = cholesky_lower(&cov_e).unwrap();

    let mut rng = stream_rng(3, 0);
    let draw = |l: &nalgebra::DMatrix<f64>, rng: &mut abp_core::rng::ChainRng| -> DVector<f64> {
        l * abp_core::sampling::sample_std_normal_vector(5, rng)
    };
    let mut miss = vec![0usize; k];
    for _ in 0..n_reps {
        let b = draw(&lb, &mut rng);
        let athlete_mean = &true_mean + &b;
        let y1 = &athlete_mean + draw(&le, &mut rng);
        let y2 = &athlete_mean + draw(&le, &mut rng);
        // Model predictive for sample 2 given y1: per state, mu_j | y1 then
        // one replicate from N(mu_j, omega_e^{-1}).
        let mut reps: Vec<DVector<f64>> = Vec::with_capacity(3200);
        for s in &chain.states {
            for _ in 0..4 {
                let a = s.omega_b.entries() + s.omega_e.entries();
                let f = cholesky_lower(&a).unwrap();
                let rhs = s.omega_b.entries() * &s.mu + s.omega_e.entries() * &y1;
                let m = solve_spd_with_factor(&f, &rhs);
                let mu_j = sample_mvn_with_precision_factor(&m, &f, &mut rng);
                let fe = s.omega_e.cholesky().unwrap();
                reps.push(sample_mvn_with_precision_factor(&mu_j, &fe, &mut rng));
            }
        }
        let ivs = marginal_hpds(&reps, 0.05).unwrap();
        for (j, iv) in ivs.iter().enumerate() {
            if !iv.contains(y2[j]) {
                miss[j] += 1;
            }
        }
    }
    println!(
        "predcheck per-marker miss over {n_reps} fresh athletes ({} reps/decision): {:?}",
        chain.retained() * 4,
        miss.iter().map(|&m| (m as f64 / n_reps as f64 * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
}

/// Candidate criterion-6 configuration.
fn crit6() {
    let subset = match std::env::args().nth(2).as_deref() {
        Some("eaas") => MarkerSubset::Eaas,
        Some("all") => MarkerSubset::All,
        _ => MarkerSubset::Ratios,
    };
    let athletes: usize = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(120);
    let n_j: usize = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(12);

    let mut spec = CohortSpec::benchmark(seed710());
    spec.normal = GroupSpec { athletes, total_samples: athletes * n_j, injected_samples: 0 };
    spec.abnormal = GroupSpec { athletes: 0, total_samples: 0, injected_samples: 0 };
    let scale = 0.7;
    let sd_b: Vec<f64> = abp_core::cohort::BASELINE_LOG_SDS.iter().map(|s| s * scale * 0.7f64.sqrt()).collect();
    let sd_e: Vec<f64> = abp_core::cohort::BASELINE_LOG_SDS.iter().map(|s| s * scale * 0.3f64.sqrt()).collect();
    spec.precision_between = abp_core::cohort::equicorrelated_precision(&sd_b, 0.65).unwrap();
    spec.precision_within = abp_core::cohort::equicorrelated_precision(&sd_e, 0.45).unwrap();
    let (cohort, _) = simulate_cohort(&spec).unwrap();

    let mut policy = ClassifierPolicy::new(ModelKind::Multivariate, subset, DecisionRule::Marginal)
        .without_scores();
    policy.n_replicates = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(12000);
    if std::env::args().nth(6).as_deref() == Some("keep") {
        policy.exclude_flagged = false;
    }
    let cold = std::env::args().nth(6).as_deref() == Some("cold");
    let gibbs = GibbsConfig {
        total_iterations: 1200,
        burn_in_fraction: 1.0 / 3.0,
        thinning: 1,
        seed: 0,
        warm: (!cold).then_some(WarmPhase { total_iterations: 600, burn_in_fraction: 1.0 / 3.0 }),
    };
    let training: Vec<_> = cohort.athletes.clone();
    let ctx = ModelContext::new(
        policy,
        PopulationThresholds::defaults(),
        UnivariateConfig::default(),
        gibbs,
        42,
        &cohort.population_baseline,
        &training,
        &BTreeMap::new(),
    )
    .unwrap();
    let start = Instant::now();
    let mut flags = 0usize;
    let mut total = 0usize;
    let mut threshold_flags = 0usize;
    for (i, athlete) in cohort.athletes.iter().enumerate() {
        let decisions = classify_sequence(athlete, i as u32, &ctx).unwrap();
        threshold_flags += usize::from(decisions[0].flagged);
        for d in &decisions[1..] {
            total += 1;
            flags += usize::from(d.flagged);
        }
    }
    let k = ctx.markers().len();
    println!(
        "crit6 K={k}: rate {:.4} in [0.05, {:.4}]? first-flags {threshold_flags}, {:?}",
        flags as f64 / total as f64,
        1.0 - 0.95f64.powi(k as i32),
        start.elapsed()
    );
}

fn seed710() -> u64 { 710 }

/// Worst-mixing scalars at two fit scales.
fn rhat_probe() {
    use abp_core::multivariate::{run_gibbs, MvData, MvPrior};
    use abp_core::rng::stream_rng;
    use nalgebra::DVector;
    use rand_distr::{Distribution, Normal};

    let mut rng = stream_rng(88, 0);
    // (a) criterion-4 style: J=50, n_j=10, K=3, no singletons.
    let k = 3;
    let normal_b = Normal::new(0.0, 0.45).unwrap();
    let normal_e = Normal::new(0.0, 0.3).unwrap();
    let true_mu = DVector::from_vec(vec![0.5, -0.2, 1.0]);
    let mut groups = Vec::new();
    for _ in 0..50 {
        let b: DVector<f64> = DVector::from_fn(k, |_, _| normal_b.sample(&mut rng));
        groups.push(
            (0..10)
                .map(|_| &true_mu + &b + DVector::from_fn(k, |_, _| normal_e.sample(&mut rng)))
                .collect::<Vec<_>>(),
        );
    }
    let data = MvData::new(groups).unwrap();
    let prior = MvPrior::default_for(true_mu.clone());
    let cfg = GibbsConfig { total_iterations: 3000, burn_in_fraction: 1.0 / 3.0, thinning: 1, seed: 0, warm: None };
    let chain = run_gibbs(&data, &prior, &cfg, &mut stream_rng(88, 1)).unwrap();
    let mut diags = chain.diagnostics();
    diags.sort_by(|a, b| b.split_rhat.partial_cmp(&a.split_rhat).unwrap());
    println!("criterion-4 scale, worst 6 of {}:", diags.len());
    for d in diags.iter().take(6) {
        println!("  {}: ess {:.1} rhat {:.4}", d.name, d.ess, d.split_rhat);
    }

    // (b) singleton-heavy: 30 athletes x 8 + 24 singletons, K=5.
    let k = 5;
    let normal_b = Normal::new(0.0, 0.6).unwrap();
    let normal_e = Normal::new(0.0, 0.45).unwrap();
    let true_mu = DVector::from_vec(vec![0.4, 0.4, 0.4, 0.4, 0.4]);
    let mut groups = Vec::new();
    for _ in 0..30 {
        let b: DVector<f64> = DVector::from_fn(k, |_, _| normal_b.sample(&mut rng));
        groups.push(
            (0..8)
                .map(|_| &true_mu + &b + DVector::from_fn(k, |_, _| normal_e.sample(&mut rng)))
                .collect::<Vec<_>>(),
        );
    }
    for _ in 0..24 {
        let b: DVector<f64> = DVector::from_fn(k, |_, _| normal_b.sample(&mut rng));
        groups.push(vec![&true_mu + &b + DVector::from_fn(k, |_, _| normal_e.sample(&mut rng))]);
    }
    let data = MvData::new(groups).unwrap();
    let prior = MvPrior::default_for(true_mu.clone());
    let chain = run_gibbs(&data, &prior, &cfg, &mut stream_rng(88, 2)).unwrap();
    let mut diags = chain.diagnostics();
    diags.sort_by(|a, b| b.split_rhat.partial_cmp(&a.split_rhat).unwrap());
    println!("singleton-heavy, worst 6 of {}:", diags.len());
    for d in diags.iter().take(6) {
        println!("  {}: ess {:.1} rhat {:.4}", d.name, d.ess, d.split_rhat);
    }
}

/// Exact reproduction of the CLI fit test's male-ratios training fit.
fn rhat_cli() {
    use abp_core::multivariate::{run_gibbs, MvData, MvPrior};
    use abp_core::profile::log_transform;
    use abp_core::rng::stream_rng;
    use nalgebra::DVector;

    let mut spec = CohortSpec::benchmark(31);
    spec.normal = GroupSpec { athletes: 30, total_samples: 240, injected_samples: 0 };
    spec.abnormal = GroupSpec { athletes: 2, total_samples: 12, injected_samples: 3 };
    spec.baseline_males = 12;
    spec.baseline_females = 12;
    let (cohort, _) = simulate_cohort(&spec).unwrap();
    let markers = match std::env::args().nth(3).as_deref() {
        Some("eaas") => MarkerSubset::Eaas.markers(),
        _ => MarkerSubset::Ratios.markers(),
    };
    let kk = markers.len();
    let mut groups: Vec<Vec<DVector<f64>>> = Vec::new();
    let mut mu0 = DVector::zeros(kk);
    let mut n0 = 0.0;
    for b in cohort.population_baseline.iter().filter(|b| b.sex == abp_core::markers::Sex::Male) {
        let v = b.log_vector(&markers).unwrap().log_values().clone();
        mu0 += &v;
        n0 += 1.0;
        groups.push(vec![v]);
    }
    mu0 /= n0;
    for a in cohort
        .athletes
        .iter()
        .filter(|a| a.sex == abp_core::markers::Sex::Male && a.athlete_id.starts_with('N'))
    {
        groups.push(
            a.samples
                .iter()
                .map(|s| log_transform(&s.substituted().unwrap(), &markers).unwrap().log_values().clone())
                .collect(),
        );
    }
    let data = MvData::new(groups).unwrap();
    println!("fit: {} athletes, {} samples", data.n_athletes(), data.total_samples());
    let prior = MvPrior::default_for(mu0);
    let t: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let cfg = GibbsConfig { total_iterations: t, burn_in_fraction: 1.0 / 3.0, thinning: 1, seed: 0, warm: None };
    let chain = run_gibbs(&data, &prior, &cfg, &mut stream_rng(31, 7)).unwrap();
    let mut diags = chain.diagnostics();
    diags.sort_by(|a, b| b.split_rhat.partial_cmp(&a.split_rhat).unwrap());
    for d in diags.iter().take(8) {
        println!("  {}: ess {:.1} rhat {:.4}", d.name, d.ess, d.split_rhat);
    }
}
