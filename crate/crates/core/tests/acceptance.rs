//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so that the lines reach the terminal
//! uncaptured. Positional arguments filter criteria by substring, e.g.
//! `cargo test --test acceptance -- xor`.
//!
//! A criterion listed in `KNOWN_DEVIATIONS` still runs at its stated
//! tolerance and still prints FAIL; it only stops the process from exiting
//! nonzero. A known deviation that starts passing is reported as such.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use num_rational::Ratio;
use rand::Rng;

use xordlab::gd::{EndpointKind, TrainingSet, WeightMatrix};
use xordlab::harness::{try_run_trials, Proportion};
use xordlab::mnist::{angle_comparison, cluster_init_experiment, ClusterInitConfig, MnistDataset};
use xordlab::patterns::{sample, uniform_diversity_probs, DistributionSpec, DiversityMode};
use xordlab::rng::{seeded, trial_rng};
use xordlab::xor_lab::{montecarlo_small_xor, xor_default_hp, xor_runs, xor_training_set};
use xordlab::xord_lab::{
    detection_threshold, main_angle_threshold_deg, sample_complexity_bounds, sweep_channels, symmetry_check, theorem_main_trial,
    theorem_small_trial, MainTrialConfig, SmallTrialConfig, SweepConfig,
};

use common::{class_constant, hinge_fd_rel_err, mnist_fd_rel_err};

const SEED: u64 = 1;

/// Criteria that fail at their stated tolerance for documented reasons.
const KNOWN_DEVIATIONS: &[(&str, &str)] = &[
    (
        "xord-invariants",
        "the output value bounds gamma+3c and 1+3c are exceeded by up to one further c; the other invariants hold",
    ),
    (
        "channel-sweep",
        "k = 4 reaches zero training error more often than the reference count allows",
    ),
];

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Outcome {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn detail(mut self, line: impl Into<String>) -> Self {
        self.details.push(line.into());
        self
    }
}

type Check = fn() -> Outcome;

fn pct(p: &Proportion) -> String {
    format!(
        "{}/{} = {:.4} [95% CI {:.4}, {:.4}]",
        p.successes, p.trials, p.fraction, p.ci_low, p.ci_high
    )
}

// ---------------------------------------------------------------------------

fn gradient_fd() -> Outcome {
    const CONFIGS: usize = 100;
    let mut rng = seeded(SEED);
    let mut draw = |k: usize| {
        let flat: Vec<f64> = (0..4 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        WeightMatrix::from_flat(k, &flat).unwrap()
    };

    let mut xor = Vec::new();
    let mut xor_skipped = 0;
    while xor.len() < CONFIGS {
        let k = 1 + xor.len() % 8;
        match hinge_fd_rel_err(&draw(k), &xor_training_set(), 1.0, 1e-6) {
            Some(e) => xor.push(e),
            None => xor_skipped += 1,
        }
    }

    let mut xord = Vec::new();
    let mut xord_skipped = 0;
    let mut srng = seeded(SEED ^ 0xd);
    while xord.len() < CONFIGS {
        let i = xord.len();
        let d = 2 + i % 7;
        let dist = DistributionSpec::uniform(d).unwrap();
        let data: Vec<_> = (0..2 + i % 6).map(|_| sample(&dist, &mut srng).unwrap()).collect();
        let set = TrainingSet::xord(&data).unwrap();
        let gamma = [1.0, 5.0, 8.0][i % 3];
        match hinge_fd_rel_err(&draw(1 + i % 8), &set, gamma, 1e-6) {
            Some(e) => xord.push(e),
            None => xord_skipped += 1,
        }
    }

    let mut mnist = Vec::new();
    let mut mnist_skipped = 0;
    let mut seed = 0u64;
    while mnist.len() < CONFIGS {
        seed += 1;
        let i = mnist.len();
        match mnist_fd_rel_err(1 + i % 3, 1 + i % 3, 64, seed) {
            Some(e) => mnist.push(e),
            None => mnist_skipped += 1,
        }
    }

    let max = |v: &[f64]| v.iter().copied().fold(0.0, f64::max);
    let (mx, md, mm) = (max(&xor), max(&xord), max(&mnist));
    let pass = mx <= 1e-5 && md <= 1e-5 && mm <= 1e-4;
    Outcome::new(
        pass,
        format!("max rel. err XOR {mx:.2e}, XORD {md:.2e} (<= 1e-5), MNIST {mm:.2e} (<= 1e-4)"),
    )
    .detail(format!(
        "{CONFIGS} smooth configurations each; skipped at kinks: XOR {xor_skipped}, XORD {xord_skipped}, MNIST {mnist_skipped}"
    ))
}

fn class_constancy() -> Outcome {
    let mut rng = seeded(SEED);
    let mut bad = 0;
    for i in 0..50u64 {
        let k = 1 + (i as usize) % 12;
        let flat: Vec<f64> = (0..4 * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w = WeightMatrix::from_flat(k, &flat).unwrap();
        if !class_constant(&w, 10, 10, SEED.wrapping_add(i)) {
            bad += 1;
        }
    }
    Outcome::new(
        bad == 0,
        format!("{bad}/50 weight matrices give a non-constant class output (15 classes x 10 inputs, d = 10)"),
    )
}

fn xor_large() -> Outcome {
    let c_eta = 0.4;
    let hp = xor_default_hp(50, c_eta);
    let runs = xor_runs(&hp, 200, SEED, None).unwrap();
    let fast = Proportion::count(
        runs.iter()
            .map(|r| r.endpoint.kind == EndpointKind::GlobalMin && r.endpoint.iteration <= 23),
    );
    let bound = (16.0 * 50f64.sqrt() / (50f64.sqrt() - 2.0)).floor() as usize;
    let threshold = ((1.0 - 2.0 * c_eta) / (1.0 + c_eta)).acos().to_degrees();
    let angle_bad: Vec<u64> = runs
        .iter()
        .filter(|r| r.angles.as_ref().is_some_and(|a| !a.ok || (a.max_angle_deg > threshold)))
        .map(|r| r.seed_index)
        .collect();
    let worst = runs
        .iter()
        .filter_map(|r| r.angles.as_ref().map(|a| a.max_angle_deg))
        .fold(0.0, f64::max);
    let pass = fast.fraction >= 0.99 && angle_bad.is_empty() && bound <= 23;
    Outcome::new(pass, format!("global min within 23 iterations: {}", pct(&fast)))
        .detail(format!("iteration bound 16 sqrt(k)/(sqrt(k)-2) = {bound} at k = 50"))
        .detail(format!(
            "angle bound {threshold:.3} deg; worst eligible filter {worst:.3} deg; runs outside: {angle_bad:?}"
        ))
}

fn xor_small() -> Outcome {
    let hp = xor_default_hp(2, 0.4);
    let (rep, _) = montecarlo_small_xor(&hp, 1000, 10_000, SEED, None).unwrap();
    let pass = rep.local_min.fraction >= 0.70 && (0.72..=0.78).contains(&rep.init_event.fraction);
    Outcome::new(
        pass,
        format!(
            "local min {:.4} (>= 0.70), init under-exploration {:.4} (in [0.72, 0.78])",
            rep.local_min.fraction, rep.init_event.fraction
        ),
    )
    .detail(format!("local min {}", pct(&rep.local_min)))
    .detail(format!("erring local min {}", pct(&rep.erring_local_min)))
    .detail(format!("init event {}", pct(&rep.init_event)))
}

fn xord_main_reports() -> &'static Vec<xordlab::xord_lab::TrialReport> {
    use std::sync::OnceLock;
    static REPORTS: OnceLock<Vec<xordlab::xord_lab::TrialReport>> = OnceLock::new();
    REPORTS.get_or_init(|| {
        let cfg = MainTrialConfig::default();
        try_run_trials(SEED, 200, None, |i, _| theorem_main_trial(&cfg, SEED, i)).unwrap()
    })
}

fn xord_main() -> Outcome {
    let cfg = MainTrialConfig::default();
    let c_d = detection_threshold(cfg.k, cfg.c_eta);
    let angle = main_angle_threshold_deg(cfg.gamma, cfg.c_eta);
    let reports = xord_main_reports();
    let ok = Proportion::count(reports.iter().map(|r| r.success));
    let global = reports.iter().filter(|r| r.endpoint.kind == EndpointKind::GlobalMin).count();
    let recovered = reports.iter().filter(|r| r.recovered_fstar).count();
    let detected = reports.iter().filter(|r| r.detection.all_detected).count();
    let constants = (c_d - 0.1344).abs() < 5e-4 && (angle - 2.62).abs() < 5e-3;
    Outcome::new(ok.fraction >= 0.98 && constants, format!("success {}", pct(&ok)))
        .detail(format!("c_d = {c_d:.5} (~0.1344), angle bound = {angle:.4} deg (~2.62)"))
        .detail(format!(
            "global min {global}, recovered {recovered}, all detected {detected} of {}",
            reports.len()
        ))
}

fn xord_small() -> Outcome {
    let cfg = SmallTrialConfig::default();
    let reports = try_run_trials(SEED, 1000, None, |i, _| theorem_small_trial(&cfg, SEED, i)).unwrap();
    let bad = Proportion::count(reports.iter().map(|r| r.success));
    let unexplained: Vec<u64> = reports
        .iter()
        .filter(|r| r.success)
        .filter(|r| r.critical_misclassified.is_empty() || r.exact_test_error < r.p_star.unwrap())
        .map(|r| r.trial_index)
        .collect();
    let p_star = reports[0].p_star.unwrap();
    let min_err = reports
        .iter()
        .filter(|r| r.success)
        .map(|r| r.exact_test_error)
        .fold(f64::INFINITY, f64::min);
    Outcome::new(
        bad.fraction >= 0.60 && unexplained.is_empty(),
        format!("non-recovering global min {}", pct(&bad)),
    )
    .detail(format!("p* = {p_star:.6}; smallest test error among those runs {min_err:.6}"))
    .detail(format!("runs without a missed critical class or below p*: {unexplained:?}"))
}

fn xord_invariants() -> Outcome {
    let cfg = MainTrialConfig::default();
    let (g, c) = (cfg.gamma, cfg.c_eta);
    let reports = xord_main_reports();
    let inv: Vec<_> = reports.iter().map(|r| r.invariants.as_ref().unwrap()).collect();
    let count = |f: fn(&xordlab::xord_lab::InvariantSummary) -> usize| inv.iter().map(|s| f(s)).sum::<usize>();
    let stability = count(|s| s.set_stability.violations);
    let monotone = count(|s| s.s_plus_monotone.violations);
    let clustering = count(|s| s.clustering.violations);
    let equivalence = count(|s| s.gradient_equivalence.violations);
    let max = |f: fn(&xordlab::xord_lab::InvariantSummary) -> f64| inv.iter().map(|s| f(s)).fold(f64::NEG_INFINITY, f64::max);
    let (sp, np, nn) = (max(|s| s.max_s_plus), max(|s| s.max_pos_output), max(|s| s.max_neg_output));
    let s_runs = inv.iter().filter(|s| s.max_s_plus > g + 1.0 + 8.0 * c).count();
    let pos_runs = inv.iter().filter(|s| s.max_pos_output > g + 3.0 * c).count();
    let neg_runs = inv.iter().filter(|s| s.max_neg_output > 1.0 + 3.0 * c).count();
    let value_iters = count(|s| s.value_bounds.violations);
    let pass = stability + s_runs + pos_runs + neg_runs == 0;
    Outcome::new(
        pass,
        format!(
            "set stability {stability}, S+ bound {s_runs} runs, N(x+) bound {pos_runs} runs, -N(x-) bound {neg_runs} runs in violation"
        ),
    )
    .detail(format!("max S+ = gamma+1+{:.3}c (bound 8c)", (sp - g - 1.0) / c))
    .detail(format!(
        "max N(x+) = gamma+{:.3}c, max -N(x-) = 1+{:.3}c (bounds 3c)",
        (np - g) / c,
        (nn - 1.0) / c
    ))
    .detail(format!("iterations with any value-bound violation: {value_iters}"))
    .detail(format!(
        "S+ monotonicity {monotone}, clustering {clustering}, closed-form update {equivalence} violations"
    ))
}

fn symmetry() -> Outcome {
    let hp = SmallTrialConfig::default().hyperparams();
    let reports = try_run_trials(SEED, 100, None, |i, _| symmetry_check(SEED, i, 500, 10, &hp)).unwrap();
    let bad: Vec<usize> = reports.iter().enumerate().filter(|(_, r)| !r.ok).map(|(i, _)| i).collect();
    let compared: usize = reports.iter().map(|r| r.iterations_compared).sum();
    Outcome::new(
        bad.is_empty() && compared >= 100 * 500,
        format!("{} of 100 paired trajectories diverge", bad.len()),
    )
    .detail(format!("{compared} iterations compared bitwise"))
}

fn diversity() -> Outcome {
    let mut pass = true;
    let mut out = Outcome::new(true, "");
    for d in 4..=8u32 {
        let (mut all4, mut positive, mut neg_div) = (0i128, 0i128, 0i128);
        for mut n in 0..4usize.pow(d) {
            let mut seen = [false; 4];
            for _ in 0..d {
                seen[n % 4] = true;
                n /= 4;
            }
            // Index order P1, P2, P3, P4; P1 and P3 are the positive patterns.
            if seen[0] || seen[2] {
                positive += 1;
                all4 += seen.iter().all(|&s| s) as i128;
            } else {
                neg_div += (seen[1] && seen[3]) as i128;
            }
        }
        let negatives = 2i128.pow(d);
        let total = 4i128.pow(d);
        let printed = uniform_diversity_probs(d as usize, DiversityMode::AsPrinted).unwrap();
        let conditional = uniform_diversity_probs(d as usize, DiversityMode::Conditional).unwrap();
        let ok = printed.p_plus == Ratio::new(all4, total)
            && conditional.p_plus == Ratio::new(all4, positive)
            && printed.p_minus == Ratio::new(neg_div, negatives)
            && conditional.p_minus == printed.p_minus;
        pass &= ok;
        out = out.detail(format!(
            "d = {d}: p- = {} {}; p+ as printed {} vs conditional {} (ratio {:.6}) {}",
            printed.p_minus,
            if printed.p_minus == Ratio::new(neg_div, negatives) {
                "exact"
            } else {
                "MISMATCH"
            },
            printed.p_plus,
            conditional.p_plus,
            conditional.p_plus_f64() / printed.p_plus_f64(),
            if ok { "match enumeration" } else { "MISMATCH" }
        ));
    }
    out.pass = pass;
    out.summary = "exact enumeration of 4^d strings for d = 4..8 against both closed forms".into();
    out
}

fn bounds() -> Outcome {
    let c = 1e-10;
    let floor = |p: f64| 1.0 - p * p * (1.0 - c - 16.0 * (-8.0f64).exp());
    let a = sample_complexity_bounds(0.98, 0.98, floor(0.98), c).unwrap();
    let b = sample_complexity_bounds(0.92, 0.92, 0.16, c).unwrap();
    let pass = a.m1_bound == 2 && (a.m2_bound - 129.0).abs() <= 10.0 && (b.m2_bound - 17.0).abs() <= 3.0;
    Outcome::new(
        pass,
        format!(
            "m2 = {:.2} (129 +- 10), m2 = {:.2} (17 +- 3), m1 = {}",
            a.m2_bound, b.m2_bound, a.m1_bound
        ),
    )
    .detail(format!("delta = {:.6} at p = 0.98 (the floor); delta = 0.16 at p = 0.92", a.delta))
}

fn channel_sweep() -> Outcome {
    const REFERENCE: [usize; 7] = [62, 79, 94, 100, 100, 100, 100];
    let cfg = SweepConfig::default();
    let (rows, _) = sweep_channels(&cfg, SEED, None).unwrap();
    let counts: Vec<usize> = rows.iter().map(|r| r.zero_train_error_runs).collect();
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]);
    let within: Vec<bool> = counts.iter().zip(REFERENCE).map(|(&c, r)| c.abs_diff(r) <= 15).collect();
    let err = |k: usize| rows.iter().find(|r| r.k == k).and_then(|r| r.mean_test_error_zero_train);
    let (e4, e200) = (err(4), err(200));
    let ordered = matches!((e4, e200), (Some(a), Some(b)) if b < a);
    let mut out = Outcome::new(
        monotone && within.iter().all(|&w| w) && ordered,
        format!("zero-train-error counts {counts:?} vs {REFERENCE:?} (+-15); k=200 error below k=4: {ordered}"),
    );
    for (r, ok) in rows.iter().zip(&within) {
        out = out.detail(format!(
            "k = {:>3}: {:>3}/{} zero train error, mean test error among them {}{}",
            r.k,
            r.zero_train_error_runs,
            r.runs,
            r.mean_test_error_zero_train
                .map(|e| format!("{e:.4}"))
                .unwrap_or_else(|| "-".into()),
            if *ok { "" } else { " (outside window)" }
        ));
    }
    out.detail(format!("non-decreasing: {monotone}"))
}

fn mnist() -> Outcome {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let (train, test) = match (MnistDataset::load_split(&dir, "train"), MnistDataset::load_split(&dir, "t10k")) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("cannot load {}: {e}", dir.display())),
    };
    let cfg = ClusterInitConfig::default();
    let out = cluster_init_experiment(&cfg, &train, &test, SEED).unwrap();
    let (_, big, _) = out.large.iter().find(|(n, _, _)| *n == 6000).expect("n = 6000 in the sweep");
    let (cmp, _) = angle_comparison(big, &cfg.kmeans, &mut trial_rng(SEED, 1)).unwrap();
    let angles_ok = cmp.trained_median < cmp.random_median;
    let mut beats = true;
    let mut res = Outcome::new(true, "");
    for r in &out.rows {
        beats &= r.cluster_init_test_accuracy >= r.best_random_test_accuracy;
        res = res.detail(format!(
            "n = {:>4}: 120-ch {:.4}, cluster-init 4-ch {:.4}, best random 4-ch {:.4} (lr {}, std {})",
            r.train_size,
            r.large_test_accuracy,
            r.cluster_init_test_accuracy,
            r.best_random_test_accuracy,
            r.best_random_lr,
            r.best_random_init_std
        ));
    }
    let last = out.rows.iter().find(|r| r.train_size == 6000).unwrap();
    let gap = last.large_test_accuracy - last.cluster_init_test_accuracy;
    res.pass = angles_ok && beats && gap <= 0.05;
    res.summary = format!(
        "median angle {:.2} vs random {:.2} deg; cluster-init >= best random at every size: {beats}; gap at n = 6000 {:.4} (<= 0.05)",
        cmp.trained_median, cmp.random_median, gap
    );
    res.detail(format!(
        "{} training and {} test images; {} grid and {} cluster runs per size",
        train.len(),
        test.len(),
        cfg.grid_runs,
        cfg.cluster_runs
    ))
}

// ---------------------------------------------------------------------------

const CRITERIA: &[(&str, Check)] = &[
    ("gradient-fd", gradient_fd),
    ("class-constancy", class_constancy),
    ("xor-k50", xor_large),
    ("xor-k2", xor_small),
    ("xord-main", xord_main),
    ("xord-k2", xord_small),
    ("xord-invariants", xord_invariants),
    ("xord-symmetry", symmetry),
    ("diversity", diversity),
    ("bounds", bounds),
    ("channel-sweep", channel_sweep),
    ("mnist", mnist),
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut unexpected = 0;
    let mut known = 0;
    let mut passed = 0;
    let mut ran = 0;
    for &(id, check) in CRITERIA {
        if !filters.is_empty() && !filters.iter().any(|f| id.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        let deviation = KNOWN_DEVIATIONS.iter().find(|(k, _)| *k == id).map(|(_, why)| *why);
        let tag = match (o.pass, deviation) {
            (true, None) => {
                passed += 1;
                "PASS"
            }
            (true, Some(_)) => {
                passed += 1;
                "PASS (listed as a known deviation; update the list)"
            }
            (false, Some(_)) => {
                known += 1;
                "FAIL (known deviation)"
            }
            (false, None) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("{tag} {id}: {} [{secs:.1}s]", o.summary);
        for d in &o.details {
            println!("    {d}");
        }
        if let (false, Some(why)) = (o.pass, deviation) {
            println!("    known deviation: {why}");
        }
    }
    println!("acceptance: {passed}/{ran} pass, {known} known deviations, {unexpected} unexpected failures");
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
