use serde::{Deserialize, Serialize};

use xordlab::gd::{self, write_filter_csv, write_trace_csv, EndpointKind, HyperParams, StopRule, TraceLevel, WeightMatrix};
use xordlab::harness::Proportion;
use xordlab::rng::trial_rng;
use xordlab::xor_lab::{montecarlo_small_xor, xor_runs, xor_training_set, XorRunReport};

use super::{endpoint_cols, opt_f64};
use crate::{Ctx, Verdict};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XorConfig {
    pub trials: usize,
    pub k: usize,
    /// Learning rate is `c_eta / k`.
    pub c_eta: f64,
    /// Defaults to `c_eta / (16 k^{3/2})`.
    pub sigma_g: Option<f64>,
    pub max_iters: usize,
}

impl Default for XorConfig {
    fn default() -> Self {
        XorConfig {
            trials: 1,
            k: 50,
            c_eta: 0.4,
            sigma_g: None,
            max_iters: 10_000,
        }
    }
}

impl XorConfig {
    fn hyperparams(&self) -> HyperParams {
        HyperParams {
            k: self.k,
            c_eta: self.c_eta,
            sigma_g: self.sigma_g.unwrap_or_else(|| HyperParams::sigma_bound(self.k, self.c_eta)),
            gamma: 1.0,
            max_iters: self.max_iters,
            stop_rule: StopRule::ZeroLoss,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XorMonteCarloConfig {
    pub trials: usize,
    /// Initializations drawn for the under-exploration frequency.
    pub init_trials: usize,
    pub k: usize,
    pub c_eta: f64,
    pub sigma_g: Option<f64>,
    pub max_iters: usize,
}

impl Default for XorMonteCarloConfig {
    fn default() -> Self {
        XorMonteCarloConfig {
            trials: 1000,
            init_trials: 10_000,
            k: 2,
            c_eta: 0.4,
            sigma_g: None,
            max_iters: 10_000,
        }
    }
}

fn runs_csv(ctx: &mut Ctx, suffix: &str, reports: &[XorRunReport]) -> anyhow::Result<()> {
    ctx.out.csv(suffix, |w| {
        w.write_record([
            "trial",
            "endpoint",
            "iteration",
            "final_loss",
            "misclassified",
            "under_explored",
            "exploration_ok",
            "within_iteration_bound",
            "clustering_ok",
            "max_angle_deg",
            "angle_ok",
            "any_tie",
        ])?;
        for r in reports {
            let [kind, it] = endpoint_cols(&r.endpoint);
            w.write_record([
                r.seed_index.to_string(),
                kind,
                it,
                r.final_loss.to_string(),
                r.misclassified.to_string(),
                r.under_explored.to_string(),
                r.exploration.as_ref().map(|e| e.ok.to_string()).unwrap_or_default(),
                r.within_iteration_bound.map(|b| b.to_string()).unwrap_or_default(),
                r.clustering_ok.to_string(),
                opt_f64(r.angles.as_ref().map(|a| a.max_angle_deg)),
                r.angles.as_ref().map(|a| a.ok.to_string()).unwrap_or_default(),
                r.any_tie.to_string(),
            ])?;
        }
        Ok(())
    })?;
    Ok(())
}

pub fn run(cfg: &XorConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let hp = cfg.hyperparams();
    hp.validate()?;
    let reports = xor_runs(&hp, cfg.trials, ctx.seed, None)?;

    // Trial 0 again with a full trace, from the same generator.
    let set = xor_training_set();
    let w0: WeightMatrix<f64> = gd::init_gaussian(hp.k, hp.sigma_g, &mut trial_rng(ctx.seed, 0))?;
    let (w, trace, end) = gd::train(&w0, &set, &hp, TraceLevel::Full, &mut [])?;
    let mut buf = Vec::new();
    write_filter_csv(&[(0, &w0), (end.iteration, &w)], &mut buf)?;
    ctx.out.csv_bytes("-filters.csv", &buf)?;
    let mut buf = Vec::new();
    write_trace_csv(&trace, &set, &mut buf)?;
    ctx.out.csv_bytes("-trace.csv", &buf)?;

    runs_csv(ctx, "-runs.csv", &reports)?;
    ctx.out.json(".json", &reports)?;
    let global = reports.iter().filter(|r| r.endpoint.kind == EndpointKind::GlobalMin).count();
    println!("k = {}: {global}/{} runs reached a global minimum", hp.k, reports.len());
    if let Some(r) = reports.first() {
        println!(
            "trial 0: {:?} after {} iterations, loss {}",
            r.endpoint.kind, r.endpoint.iteration, r.final_loss
        );
    }
    Ok(Verdict::Done)
}

#[derive(Serialize)]
struct MonteCarloSummary {
    k: usize,
    c_eta: f64,
    sigma_g: f64,
    local_min: Proportion,
    erring_local_min: Proportion,
    local_min_without_error: usize,
    init_event: Proportion,
    global_min_within_iteration_bound: Option<Proportion>,
}

fn show(name: &str, p: &Proportion) {
    println!(
        "{name}: {:.4} ({}/{}), 95% CI [{:.4}, {:.4}]",
        p.fraction, p.successes, p.trials, p.ci_low, p.ci_high
    );
}

pub fn montecarlo(cfg: &XorMonteCarloConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let hp = XorConfig {
        trials: cfg.trials,
        k: cfg.k,
        c_eta: cfg.c_eta,
        sigma_g: cfg.sigma_g,
        max_iters: cfg.max_iters,
    }
    .hyperparams();
    hp.validate()?;
    let (rep, runs) = montecarlo_small_xor(&hp, cfg.trials, cfg.init_trials, ctx.seed, None)?;
    let within = runs
        .iter()
        .all(|r| r.within_iteration_bound.is_some())
        .then(|| Proportion::count(runs.iter().map(|r| r.within_iteration_bound == Some(true))));
    let summary = MonteCarloSummary {
        k: hp.k,
        c_eta: hp.c_eta,
        sigma_g: hp.sigma_g,
        local_min: rep.local_min,
        erring_local_min: rep.erring_local_min,
        local_min_without_error: rep.local_min_without_error,
        init_event: rep.init_event,
        global_min_within_iteration_bound: within,
    };
    show("local-min fraction", &summary.local_min);
    show("erring local-min fraction", &summary.erring_local_min);
    show("under-exploration at init", &summary.init_event);
    if let Some(p) = &summary.global_min_within_iteration_bound {
        show("global min within the iteration bound", p);
    }
    runs_csv(ctx, "-runs.csv", &runs)?;
    ctx.out.json(".json", &summary)?;
    Ok(Verdict::Done)
}
