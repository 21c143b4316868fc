use serde::{Deserialize, Serialize};

use xordlab::gd::{write_filter_csv, EndpointKind, HyperParams, StopRule};
use xordlab::harness::{try_run_trials, Proportion};
use xordlab::patterns::PatternSet;
use xordlab::xord_lab::{
    decoy_experiment, decoy_hyperparams, gamma_comparison, pair_gamma_rows, sweep_channels, symmetry_check, theorem_main_trial,
    theorem_small_trial, DecoyReport, DecoyVariant, MainTrialConfig, SmallTrialConfig, SweepConfig, SweepRow, SweepTrial, SymmetryReport,
    TrialReport,
};

use super::{endpoint_cols, opt_f64, serde_plain};
use crate::{Ctx, Verdict};

fn keys(sets: &[PatternSet]) -> String {
    sets.iter().map(|s| format!("{{{}}}", s.key())).collect::<Vec<_>>().join(";")
}

fn trials_csv(ctx: &mut Ctx, reports: &[TrialReport]) -> anyhow::Result<()> {
    ctx.out.csv("-trials.csv", |w| {
        w.write_record([
            "trial",
            "endpoint",
            "iteration",
            "final_loss",
            "success",
            "recovered_fstar",
            "misclassified",
            "critical_misclassified",
            "exact_test_error",
            "p_star",
            "all_detected",
            "min_detection",
            "max_angle_deg",
            "angle_threshold_deg",
            "invariant_violations",
            "value_bound_violations",
            "max_pos_output",
            "max_neg_output",
            "max_s_plus",
            "any_tie",
        ])?;
        for r in reports {
            let [kind, it] = endpoint_cols(&r.endpoint);
            let inv = r.invariants.as_ref();
            w.write_record([
                r.trial_index.to_string(),
                kind,
                it,
                r.final_loss.to_string(),
                r.success.to_string(),
                r.recovered_fstar.to_string(),
                keys(&r.misclassified),
                keys(&r.critical_misclassified),
                r.exact_test_error.to_string(),
                opt_f64(r.p_star),
                r.detection.all_detected.to_string(),
                r.detection.values.iter().cloned().fold(f64::INFINITY, f64::min).to_string(),
                opt_f64(r.angles.as_ref().map(|a| a.max_angle_deg)),
                opt_f64(r.angles.as_ref().map(|a| a.threshold_deg)),
                inv.map(|i| i.total_violations().to_string()).unwrap_or_default(),
                inv.map(|i| i.value_bounds.violations.to_string()).unwrap_or_default(),
                opt_f64(inv.map(|i| i.max_pos_output)),
                opt_f64(inv.map(|i| i.max_neg_output)),
                opt_f64(inv.map(|i| i.max_s_plus)),
                r.any_tie.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremMainConfig {
    pub trials: usize,
    /// Required fraction of successful trials.
    pub min_success: f64,
    /// Also require zero trajectory-invariant violations.
    pub check_invariants: bool,
    pub theorem: MainTrialConfig,
}

impl Default for TheoremMainConfig {
    fn default() -> Self {
        TheoremMainConfig {
            trials: 200,
            min_success: 0.98,
            check_invariants: true,
            theorem: MainTrialConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct InvariantTotals {
    value_bounds: usize,
    set_stability: usize,
    s_plus_monotone: usize,
    clustering: usize,
    gradient_equivalence: usize,
    runs_with_violations: usize,
    max_pos_output: f64,
    max_neg_output: f64,
    max_s_plus: f64,
}

#[derive(Serialize)]
struct TheoremSummary<'a> {
    success: Proportion,
    global_min: Proportion,
    recovered: Proportion,
    invariants: Option<InvariantTotals>,
    reports: &'a [TrialReport],
}

fn totals(reports: &[TrialReport]) -> Option<InvariantTotals> {
    let invs: Vec<_> = reports.iter().filter_map(|r| r.invariants.as_ref()).collect();
    if invs.is_empty() {
        return None;
    }
    let sum = |f: &dyn Fn(&xordlab::xord_lab::InvariantSummary) -> usize| invs.iter().map(|i| f(i)).sum();
    let max = |f: &dyn Fn(&xordlab::xord_lab::InvariantSummary) -> f64| invs.iter().map(|i| f(i)).fold(f64::NEG_INFINITY, f64::max);
    Some(InvariantTotals {
        value_bounds: sum(&|i| i.value_bounds.violations),
        set_stability: sum(&|i| i.set_stability.violations),
        s_plus_monotone: sum(&|i| i.s_plus_monotone.violations),
        clustering: sum(&|i| i.clustering.violations),
        gradient_equivalence: sum(&|i| i.gradient_equivalence.violations),
        runs_with_violations: invs.iter().filter(|i| i.total_violations() > 0).count(),
        max_pos_output: max(&|i| i.max_pos_output),
        max_neg_output: max(&|i| i.max_neg_output),
        max_s_plus: max(&|i| i.max_s_plus),
    })
}

fn summarize(reports: &[TrialReport]) -> TheoremSummary<'_> {
    TheoremSummary {
        success: Proportion::count(reports.iter().map(|r| r.success)),
        global_min: Proportion::count(reports.iter().map(|r| r.endpoint.kind == EndpointKind::GlobalMin)),
        recovered: Proportion::count(reports.iter().map(|r| r.recovered_fstar)),
        invariants: totals(reports),
        reports,
    }
}

pub fn theorem_main(cfg: &TheoremMainConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let seed = ctx.seed;
    let reports = try_run_trials(seed, cfg.trials, None, |i, _| theorem_main_trial(&cfg.theorem, seed, i))?;
    trials_csv(ctx, &reports)?;
    let s = summarize(&reports);
    ctx.out.json(".json", &s)?;
    println!(
        "success {}/{} (global min {}, recovered {})",
        s.success.successes, s.success.trials, s.global_min.successes, s.recovered.successes
    );
    let inv = s.invariants.as_ref().expect("main trials run the monitors");
    println!(
        "invariant violations: value bounds {}, set stability {}, S+ monotone {}, clustering {}, gradient {} ({} runs affected)",
        inv.value_bounds, inv.set_stability, inv.s_plus_monotone, inv.clustering, inv.gradient_equivalence, inv.runs_with_violations
    );
    println!(
        "max N(x+) = {}, max -N(x-) = {}, max S+ = {}",
        inv.max_pos_output, inv.max_neg_output, inv.max_s_plus
    );
    let mut fails = Vec::new();
    if s.success.fraction < cfg.min_success {
        fails.push(format!("success fraction {:.4} < {}", s.success.fraction, cfg.min_success));
    }
    let violations = inv.value_bounds + inv.set_stability + inv.s_plus_monotone + inv.clustering + inv.gradient_equivalence;
    if cfg.check_invariants && violations > 0 {
        fails.push(format!("{violations} invariant violations"));
    }
    Ok(if fails.is_empty() {
        Verdict::Pass(format!("success fraction {:.4}, no invariant violations", s.success.fraction))
    } else {
        Verdict::Fail(fails.join("; "))
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoremSmallConfig {
    pub trials: usize,
    /// Required fraction of runs ending at a non-recovering global minimum.
    pub min_success: f64,
    pub theorem: SmallTrialConfig,
}

impl Default for TheoremSmallConfig {
    fn default() -> Self {
        TheoremSmallConfig {
            trials: 1000,
            min_success: 0.6,
            theorem: SmallTrialConfig::default(),
        }
    }
}

pub fn theorem_small(cfg: &TheoremSmallConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let seed = ctx.seed;
    let reports = try_run_trials(seed, cfg.trials, None, |i, _| theorem_small_trial(&cfg.theorem, seed, i))?;
    trials_csv(ctx, &reports)?;
    let s = summarize(&reports);
    ctx.out.json(".json", &s)?;
    let bad: Vec<u64> = reports
        .iter()
        .filter(|r| r.success && (r.critical_misclassified.is_empty() || r.exact_test_error < r.p_star.unwrap_or(f64::INFINITY)))
        .map(|r| r.trial_index)
        .collect();
    println!(
        "non-recovering global minima {}/{} = {:.4}, 95% CI [{:.4}, {:.4}]; p* = {}",
        s.success.successes,
        s.success.trials,
        s.success.fraction,
        s.success.ci_low,
        s.success.ci_high,
        opt_f64(reports.first().and_then(|r| r.p_star))
    );
    let mut fails = Vec::new();
    if s.success.fraction < cfg.min_success {
        fails.push(format!("fraction {:.4} < {}", s.success.fraction, cfg.min_success));
    }
    if !bad.is_empty() {
        fails.push(format!("runs {bad:?} miss no critical class or have test error below p*"));
    }
    Ok(if fails.is_empty() {
        Verdict::Pass(format!(
            "fraction {:.4}; every such run misses a critical class with error >= p*",
            s.success.fraction
        ))
    } else {
        Verdict::Fail(fails.join("; "))
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoyConfig {
    pub trials: usize,
    pub variants: Vec<DecoyVariant>,
    pub channels: Vec<usize>,
    pub gamma: f64,
    pub c_eta: f64,
    pub d: usize,
}

impl Default for DecoyConfig {
    fn default() -> Self {
        DecoyConfig {
            trials: 1,
            variants: vec![DecoyVariant::AllDiverse, DecoyVariant::WithNondiverse],
            channels: vec![2, 100],
            gamma: 8.0,
            c_eta: 1.0 / 410.0,
            d: 10,
        }
    }
}

#[derive(Serialize)]
struct DecoyRun {
    trial: u64,
    report: DecoyReport,
}

pub fn decoy(cfg: &DecoyConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let seed = ctx.seed;
    let mut all = Vec::new();
    for &variant in &cfg.variants {
        for &k in &cfg.channels {
            let hp = decoy_hyperparams(k, cfg.gamma, cfg.c_eta);
            hp.validate()?;
            let mut runs = try_run_trials(seed, cfg.trials, None, |i, _| decoy_experiment(variant, &hp, cfg.d, seed, i))?;
            if let Some((_, w0, w)) = runs.first() {
                let t = runs[0].0.endpoint.iteration;
                let mut buf = Vec::new();
                write_filter_csv(&[(0, w0), (t, w)], &mut buf)?;
                ctx.out.csv_bytes(&format!("-filters-{}-k{k}.csv", serde_plain(&variant)), &buf)?;
            }
            let recovered = runs.iter().filter(|r| r.0.recovered_fstar).count();
            let zero_train = runs.iter().filter(|r| r.0.train_error == 0.0).count();
            println!(
                "{} k = {k}: zero train error {zero_train}/{n}, recovered {recovered}/{n}",
                serde_plain(&variant),
                n = runs.len()
            );
            all.extend(runs.drain(..).enumerate().map(|(i, r)| DecoyRun {
                trial: i as u64,
                report: r.0,
            }));
        }
    }
    ctx.out.csv("-runs.csv", |w| {
        w.write_record([
            "variant",
            "k",
            "trial",
            "endpoint",
            "iteration",
            "final_loss",
            "train_error",
            "recovered_fstar",
            "misclassified",
            "exact_test_error",
        ])?;
        for r in &all {
            let [kind, it] = endpoint_cols(&r.report.endpoint);
            w.write_record([
                serde_plain(&r.report.variant),
                r.report.k.to_string(),
                r.trial.to_string(),
                kind,
                it,
                r.report.final_loss.to_string(),
                r.report.train_error.to_string(),
                r.report.recovered_fstar.to_string(),
                keys(&r.report.misclassified),
                r.report.exact_test_error.to_string(),
            ])?;
        }
        Ok(())
    })?;
    ctx.out.json(".json", &all)?;
    Ok(Verdict::Done)
}

fn sweep_rows_csv(ctx: &mut Ctx, suffix: &str, rows: &[SweepRow]) -> anyhow::Result<()> {
    ctx.out.csv(suffix, |w| {
        w.write_record([
            "gamma",
            "k",
            "runs",
            "zero_train_error_runs",
            "mean_test_error",
            "mean_test_error_zero_train",
            "mean_train_error",
        ])?;
        for r in rows {
            w.write_record([
                r.gamma.to_string(),
                r.k.to_string(),
                r.runs.to_string(),
                r.zero_train_error_runs.to_string(),
                r.mean_test_error.to_string(),
                opt_f64(r.mean_test_error_zero_train),
                r.mean_train_error.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(())
}

fn sweep_trials_csv(ctx: &mut Ctx, trials: &[SweepTrial]) -> anyhow::Result<()> {
    ctx.out.csv("-trials.csv", |w| {
        w.write_record([
            "gamma",
            "k",
            "run",
            "endpoint",
            "iteration",
            "final_loss",
            "train_error",
            "zero_train_error",
            "exact_test_error",
        ])?;
        for t in trials {
            let [kind, it] = endpoint_cols(&t.endpoint);
            w.write_record([
                t.gamma.to_string(),
                t.k.to_string(),
                t.run.to_string(),
                kind,
                it,
                t.final_loss.to_string(),
                t.train_error.to_string(),
                t.zero_train_error.to_string(),
                t.exact_test_error.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(())
}

fn print_rows(rows: &[SweepRow]) {
    println!(
        "{:>6} {:>5} {:>10} {:>12} {:>16}",
        "gamma", "k", "zero-train", "test error", "test error (zt)"
    );
    for r in rows {
        println!(
            "{:>6} {:>5} {:>10} {:>12.5} {:>16}",
            r.gamma,
            r.k,
            format!("{}/{}", r.zero_train_error_runs, r.runs),
            r.mean_test_error,
            r.mean_test_error_zero_train
                .map(|v| format!("{v:.5}"))
                .unwrap_or_else(|| "-".into())
        );
    }
}

pub fn sweep(cfg: &SweepConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let (rows, trials) = sweep_channels(cfg, ctx.seed, None)?;
    sweep_rows_csv(ctx, ".csv", &rows)?;
    sweep_trials_csv(ctx, &trials)?;
    ctx.out.json(".json", &rows)?;
    print_rows(&rows);
    Ok(Verdict::Done)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GammaConfig {
    pub gammas: Vec<f64>,
    pub sweep: SweepConfig,
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig {
            gammas: vec![1.0, 5.0],
            sweep: SweepConfig::default(),
        }
    }
}

pub fn gamma(cfg: &GammaConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let (rows, trials) = gamma_comparison(&cfg.sweep, &cfg.gammas, ctx.seed, None)?;
    sweep_rows_csv(ctx, ".csv", &rows)?;
    sweep_trials_csv(ctx, &trials)?;
    let paired = pair_gamma_rows(&rows);
    ctx.out.json(".json", &paired)?;
    print_rows(&rows);
    if cfg.gammas.len() == 2 {
        let better = paired.iter().filter(|p| p.mean_test_error[1] <= p.mean_test_error[0]).count();
        println!(
            "gamma = {} has mean test error <= gamma = {} at {better} of {} channel counts",
            cfg.gammas[1],
            cfg.gammas[0],
            paired.len()
        );
    }
    Ok(Verdict::Done)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SymmetryConfig {
    pub trials: usize,
    pub iters: usize,
    pub d: usize,
    pub c_eta: f64,
    pub gamma: f64,
    /// Defaults to `c_eta / (16 · 2^{3/2})`.
    pub sigma_g: Option<f64>,
}

impl Default for SymmetryConfig {
    fn default() -> Self {
        SymmetryConfig {
            trials: 100,
            iters: 500,
            d: 10,
            c_eta: 1.0 / 41.0,
            gamma: 8.0,
            sigma_g: None,
        }
    }
}

#[derive(Serialize)]
struct SymmetryRun {
    trial: u64,
    report: SymmetryReport,
}

pub fn symmetry(cfg: &SymmetryConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let hp = HyperParams {
        k: 2,
        c_eta: cfg.c_eta,
        sigma_g: cfg.sigma_g.unwrap_or_else(|| HyperParams::sigma_bound(2, cfg.c_eta)),
        gamma: cfg.gamma,
        max_iters: cfg.iters.max(1),
        stop_rule: StopRule::Budget,
    };
    hp.validate()?;
    let seed = ctx.seed;
    let reports = try_run_trials(seed, cfg.trials, None, |i, _| symmetry_check(seed, i, cfg.iters, cfg.d, &hp))?;
    let runs: Vec<SymmetryRun> = reports
        .into_iter()
        .enumerate()
        .map(|(i, report)| SymmetryRun { trial: i as u64, report })
        .collect();
    ctx.out.csv(".csv", |w| {
        w.write_record(["trial", "ok", "iterations_compared", "first_divergence"])?;
        for r in &runs {
            w.write_record([
                r.trial.to_string(),
                r.report.ok.to_string(),
                r.report.iterations_compared.to_string(),
                r.report.first_divergence.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        Ok(())
    })?;
    ctx.out.json(".json", &runs)?;
    let failed: Vec<u64> = runs.iter().filter(|r| !r.report.ok).map(|r| r.trial).collect();
    Ok(if failed.is_empty() {
        Verdict::Pass(format!("{} seeds x {} iterations match bitwise", runs.len(), cfg.iters))
    } else {
        Verdict::Fail(format!("trajectories diverge for trials {failed:?}"))
    })
}
