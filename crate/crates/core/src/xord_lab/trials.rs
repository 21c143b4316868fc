use serde::{Deserialize, Serialize};

use super::monitors::{ClusteringMonitor, GradientEquivalenceMonitor, SPlusMonitor, SetStabilityMonitor, ValueBoundMonitor, ViolationLog};
use super::{
    cluster_angles, decision_map, detection_confidence, detection_threshold, diverse_pair, main_angle_threshold_deg, main_budget,
    recovers_fstar, ClassDecision, ClusterAngles, DetectionReport, XordSetSnapshot,
};
use crate::error::{Error, Result};
use crate::gd::{self, Endpoint, EndpointKind, HyperParams, StopRule, TraceLevel, TrainingSet, WeightMatrix};
use crate::patterns::{critical_classes, exact_test_error, p_star, DistributionSpec, PatternSet};
use crate::rng::trial_rng;

/// Over-parameterized theorem trial settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MainTrialConfig {
    pub k: usize,
    pub c_eta: f64,
    /// Defaults to `c_eta / (16 k^{3/2})`.
    pub sigma_g: Option<f64>,
    pub gamma: f64,
    pub d: usize,
    /// Defaults to `⌈28(γ + 1 + 8c)/c⌉`.
    pub max_iters: Option<usize>,
    pub allow_outside_regime: bool,
}

impl Default for MainTrialConfig {
    fn default() -> Self {
        MainTrialConfig {
            k: 120,
            c_eta: 1.0 / 410.0,
            sigma_g: None,
            gamma: 8.0,
            d: 10,
            max_iters: None,
            allow_outside_regime: false,
        }
    }
}

impl MainTrialConfig {
    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            k: self.k,
            c_eta: self.c_eta,
            sigma_g: self.sigma_g.unwrap_or_else(|| HyperParams::sigma_bound(self.k, self.c_eta)),
            gamma: self.gamma,
            max_iters: self.max_iters.unwrap_or_else(|| main_budget(self.gamma, self.c_eta)),
            stop_rule: StopRule::ZeroLoss,
        }
    }
}

/// `k = 2` theorem trial settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmallTrialConfig {
    pub c_eta: f64,
    pub sigma_g: Option<f64>,
    pub gamma: f64,
    pub max_iters: usize,
    /// Distribution for the test error and `p*`; its `d` sets the input length.
    pub distribution: DistributionSpec,
    pub allow_outside_regime: bool,
}

impl Default for SmallTrialConfig {
    fn default() -> Self {
        SmallTrialConfig {
            c_eta: 1.0 / 41.0,
            sigma_g: None,
            gamma: 8.0,
            max_iters: 200_000,
            distribution: DistributionSpec::uniform(10).expect("valid"),
            allow_outside_regime: false,
        }
    }
}

impl SmallTrialConfig {
    pub fn hyperparams(&self) -> HyperParams {
        HyperParams {
            k: 2,
            c_eta: self.c_eta,
            sigma_g: self.sigma_g.unwrap_or_else(|| HyperParams::sigma_bound(2, self.c_eta)),
            gamma: self.gamma,
            max_iters: self.max_iters,
            stop_rule: StopRule::ZeroLoss,
        }
    }
}

/// Preconditions of the over-parameterized theorem that `hp` violates.
pub fn main_regime_violations(hp: &HyperParams) -> Vec<String> {
    let mut v = Vec::new();
    if hp.k < 120 {
        v.push(format!("k = {} < 120", hp.k));
    }
    if hp.c_eta > 1.0 / 410.0 {
        v.push(format!("c_eta = {} > 1/410", hp.c_eta));
    }
    if hp.sigma_g > HyperParams::sigma_bound(hp.k, hp.c_eta) {
        v.push(format!("sigma_g = {} > c_eta/(16 k^1.5)", hp.sigma_g));
    }
    if hp.gamma < 8.0 {
        v.push(format!("gamma = {} < 8", hp.gamma));
    }
    v
}

/// Preconditions of the `k = 2` theorem that `hp` violates.
pub fn small_regime_violations(hp: &HyperParams) -> Vec<String> {
    let mut v = Vec::new();
    if hp.k != 2 {
        v.push(format!("k = {} != 2", hp.k));
    }
    if hp.c_eta > 1.0 / 41.0 {
        v.push(format!("c_eta = {} > 1/41", hp.c_eta));
    }
    if hp.sigma_g > HyperParams::sigma_bound(hp.k, hp.c_eta) {
        v.push(format!("sigma_g = {} > c_eta/(16 k^1.5)", hp.sigma_g));
    }
    if hp.gamma < 1.0 {
        v.push(format!("gamma = {} < 1", hp.gamma));
    }
    v
}

fn gate(violations: Vec<String>, allow: bool) -> Result<()> {
    if violations.is_empty() || allow {
        Ok(())
    } else {
        Err(Error::ConfigurationRejected(violations.join("; ")))
    }
}

/// Violation counts of the trajectory monitors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantSummary {
    pub value_bounds: ViolationLog,
    pub set_stability: ViolationLog,
    pub s_plus_monotone: ViolationLog,
    pub clustering: ViolationLog,
    pub gradient_equivalence: ViolationLog,
    pub gradient_steps_skipped_for_ties: usize,
    pub max_pos_output: f64,
    pub max_neg_output: f64,
    pub max_s_plus: f64,
}

impl InvariantSummary {
    pub fn total_violations(&self) -> usize {
        [
            &self.value_bounds,
            &self.set_stability,
            &self.s_plus_monotone,
            &self.clustering,
            &self.gradient_equivalence,
        ]
        .iter()
        .map(|l| l.violations)
        .sum()
    }
}

/// Outcome of one XORD theorem trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub master_seed: u64,
    pub trial_index: u64,
    pub k: usize,
    pub c_eta: f64,
    pub sigma_g: f64,
    pub gamma: f64,
    pub d: usize,
    pub endpoint: Endpoint,
    pub final_loss: f64,
    pub recovered_fstar: bool,
    pub decisions: Vec<ClassDecision>,
    pub misclassified: Vec<PatternSet>,
    pub detection: DetectionReport,
    pub exact_test_error: f64,
    pub angles: Option<ClusterAngles>,
    pub invariants: Option<InvariantSummary>,
    /// Critical classes `{2}`, `{4}`, `{1,2,4}`, `{2,3,4}` that are misclassified.
    pub critical_misclassified: Vec<PatternSet>,
    pub p_star: Option<f64>,
    pub any_tie: bool,
    /// Main trial: global minimum, recovery, full detection and clustering.
    /// Small trial: a global minimum that does not recover the rule.
    pub success: bool,
}

struct Outcome {
    w0: WeightMatrix<f64>,
    w: WeightMatrix<f64>,
    endpoint: Endpoint,
    final_loss: f64,
    any_tie: bool,
    invariants: Option<InvariantSummary>,
}

fn run_pair(hp: &HyperParams, d: usize, master_seed: u64, index: u64, with_monitors: bool) -> Result<Outcome> {
    let set = TrainingSet::xord_labeled(&diverse_pair(d)?)?;
    let mut rng = trial_rng(master_seed, index);
    let w0: WeightMatrix<f64> = gd::init_gaussian(hp.k, hp.sigma_g, &mut rng)?;
    let mut vb = ValueBoundMonitor::default();
    let mut ss = SetStabilityMonitor::default();
    let mut sp = SPlusMonitor::default();
    let mut cl = ClusteringMonitor::default();
    let mut ge = GradientEquivalenceMonitor::default();
    let (w, trace, endpoint) = if with_monitors {
        gd::train(&w0, &set, hp, TraceLevel::Off, &mut [&mut vb, &mut ss, &mut sp, &mut cl, &mut ge])?
    } else {
        gd::train(&w0, &set, hp, TraceLevel::Off, &mut [])?
    };
    let invariants = with_monitors.then(|| InvariantSummary {
        max_pos_output: vb.max_pos_output,
        max_neg_output: vb.max_neg_output,
        max_s_plus: vb.max_s_plus,
        value_bounds: vb.log,
        set_stability: ss.log,
        s_plus_monotone: sp.log,
        clustering: cl.log,
        gradient_steps_skipped_for_ties: ge.skipped_ties,
        gradient_equivalence: ge.log,
    });
    Ok(Outcome {
        w0,
        w,
        endpoint,
        final_loss: trace.last.loss,
        any_tie: trace.any_tie,
        invariants,
    })
}

/// Trains the over-parameterized network on a diverse pair and checks the
/// theorem's conclusions: a global minimum that recovers the rule, detects
/// every pattern at `c_d = (1 − 5c/4)/(α(k) + 1)`, and has the filters of
/// `W₀⁺(1) ∪ W₀⁺(3)` within `arccos((γ − 1 − 2c)/(γ − 1 + c))` of their
/// pattern. All trajectory monitors run.
pub fn theorem_main_trial(cfg: &MainTrialConfig, master_seed: u64, index: u64) -> Result<TrialReport> {
    let hp = cfg.hyperparams();
    hp.validate()?;
    gate(main_regime_violations(&hp), cfg.allow_outside_regime)?;
    let out = run_pair(&hp, cfg.d, master_seed, index, true)?;
    let (recovered, decisions) = recovers_fstar(&out.w, cfg.d)?;
    let detection = detection_confidence(&out.w, detection_threshold(hp.k, hp.c_eta).max(0.0))?;
    let initial = XordSetSnapshot::of(&out.w0, 0);
    let global = out.endpoint.kind == EndpointKind::GlobalMin;
    let angles = global.then(|| cluster_angles(&out.w, &initial, main_angle_threshold_deg(hp.gamma, hp.c_eta)));
    let dist = DistributionSpec::uniform(cfg.d)?;
    let exact = exact_test_error(&decision_map(&decisions), &dist)?;
    let success = global && recovered && detection.all_detected && angles.as_ref().is_some_and(|a| a.ok);
    Ok(report(
        &hp,
        cfg.d,
        master_seed,
        index,
        out,
        recovered,
        decisions,
        detection,
        exact,
        angles,
        None,
        success,
    ))
}

/// Trains the `k = 2` network on a diverse pair and reports whether it
/// reached a global minimum that fails to recover the rule, which critical
/// classes it misclassifies, its exact test error and `p*`. Detection is
/// evaluated at `c_d = 2c`.
pub fn theorem_small_trial(cfg: &SmallTrialConfig, master_seed: u64, index: u64) -> Result<TrialReport> {
    let hp = cfg.hyperparams();
    hp.validate()?;
    gate(small_regime_violations(&hp), cfg.allow_outside_regime)?;
    let d = cfg.distribution.d;
    let out = run_pair(&hp, d, master_seed, index, false)?;
    let (recovered, decisions) = recovers_fstar(&out.w, d)?;
    let detection = detection_confidence(&out.w, 2.0 * hp.c_eta)?;
    let exact = exact_test_error(&decision_map(&decisions), &cfg.distribution)?;
    let global = out.endpoint.kind == EndpointKind::GlobalMin;
    let success = global && !recovered;
    let ps = p_star(&cfg.distribution);
    Ok(report(
        &hp,
        d,
        master_seed,
        index,
        out,
        recovered,
        decisions,
        detection,
        exact,
        None,
        Some(ps),
        success,
    ))
}

#[allow(clippy::too_many_arguments)]
fn report(
    hp: &HyperParams,
    d: usize,
    master_seed: u64,
    trial_index: u64,
    out: Outcome,
    recovered_fstar: bool,
    decisions: Vec<ClassDecision>,
    detection: DetectionReport,
    exact_test_error: f64,
    angles: Option<ClusterAngles>,
    p_star: Option<f64>,
    success: bool,
) -> TrialReport {
    let misclassified = decisions
        .iter()
        .filter(|c| c.feasible && !c.correct)
        .map(|c| c.class)
        .collect::<Vec<_>>();
    let critical_misclassified = critical_classes().into_iter().filter(|c| misclassified.contains(c)).collect();
    TrialReport {
        master_seed,
        trial_index,
        k: hp.k,
        c_eta: hp.c_eta,
        sigma_g: hp.sigma_g,
        gamma: hp.gamma,
        d,
        endpoint: out.endpoint,
        final_loss: out.final_loss,
        recovered_fstar,
        decisions,
        misclassified,
        detection,
        exact_test_error,
        angles,
        invariants: out.invariants,
        critical_misclassified,
        p_star,
        any_tie: out.any_tie,
        success,
    }
}
