//! Set tracking and checks for the XOR warm-up problem.
//!
//! The four training points, indexed 1 to 4:
//! `x1 = (1,1)`, `x2 = (−1,1)`, `x3 = (−1,−1)`, `x4 = (1,−1)` with labels
//! `+1, −1, +1, −1`. Point `i` is trained as example `i − 1`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gd::{self, Endpoint, EndpointKind, Group, HyperParams, Monitor, StepView, StopRule, TraceLevel, TrainingSet, WeightMatrix};
use crate::harness::{try_run_trials, Proportion};
use crate::patterns::{Label, Pattern};
use crate::scalar::{angle2_deg, Scalar};

/// `(pattern, label)` for XOR points 1 to 4.
pub const XOR_POINTS: [(Pattern, Label); 4] = [
    (Pattern::P1, Label::Positive),
    (Pattern::P4, Label::Negative),
    (Pattern::P3, Label::Positive),
    (Pattern::P2, Label::Negative),
];

pub fn xor_point(i: usize) -> Result<Pattern> {
    match i {
        1..=4 => Ok(XOR_POINTS[i - 1].0),
        _ => Err(invalid(format!("XOR point index {i} not in 1..=4"))),
    }
}

pub fn xor_training_set() -> TrainingSet {
    TrainingSet::xor(&XOR_POINTS).expect("four points")
}

/// `W⁺(i) = {j : wʲ·xᵢ > 0}` and `U⁺(i)` likewise, for `i = 1..4` (stored at `i − 1`).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct XorSetSnapshot {
    pub t: usize,
    pub wplus: [Vec<usize>; 4],
    pub uplus: [Vec<usize>; 4],
    /// Some filter has a zero dot product with some point.
    pub zero_dot: bool,
}

impl XorSetSnapshot {
    pub fn of<T: Scalar>(w: &WeightMatrix<T>, t: usize) -> Self {
        let mut zero_dot = false;
        let mut sets = |filters: &[[T; 2]]| -> [Vec<usize>; 4] {
            std::array::from_fn(|i| {
                let p = XOR_POINTS[i].0;
                filters
                    .iter()
                    .enumerate()
                    .filter_map(|(j, f)| {
                        let v = gd::dot_pattern(*f, p);
                        zero_dot |= v == T::zero();
                        (v > T::zero()).then_some(j)
                    })
                    .collect()
            })
        };
        let wplus = sets(&w.w);
        let uplus = sets(&w.u);
        XorSetSnapshot { t, wplus, uplus, zero_dot }
    }

    /// The set for point `i` (1-based) in `group`.
    pub fn set(&self, group: Group, i: usize) -> &[usize] {
        match group {
            Group::W => &self.wplus[i - 1],
            Group::U => &self.uplus[i - 1],
        }
    }
}

/// `k/2 ± 2√k`.
pub fn exploration_bounds(k: usize) -> (f64, f64) {
    let k = k as f64;
    (k / 2.0 - 2.0 * k.sqrt(), k / 2.0 + 2.0 * k.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub lower: f64,
    pub upper: f64,
    pub w_sizes: [usize; 4],
    pub u_sizes: [usize; 4],
    pub ok: bool,
}

/// Whether every `|W₀⁺(i)|` and `|U₀⁺(i)|` lies in `[k/2 − 2√k, k/2 + 2√k]`.
pub fn check_exploration_xor(snapshot: &XorSetSnapshot, k: usize) -> Result<ExplorationReport> {
    if k <= 16 {
        return Err(invalid(format!("exploration bounds need k > 16, got {k}")));
    }
    let (lower, upper) = exploration_bounds(k);
    let w_sizes = std::array::from_fn(|i| snapshot.wplus[i].len());
    let u_sizes = std::array::from_fn(|i| snapshot.uplus[i].len());
    let ok = w_sizes.iter().chain(&u_sizes).all(|&s| (lower..=upper).contains(&(s as f64)));
    Ok(ExplorationReport {
        lower,
        upper,
        w_sizes,
        u_sizes,
        ok,
    })
}

/// One iteration of the clustering decomposition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStep {
    pub t: usize,
    pub a: u64,
    pub v: [f64; 2],
    pub ok: bool,
}

/// The point orthogonal to point `i` used by the residual bound.
fn companion(i: usize) -> Pattern {
    if i == 1 || i == 3 {
        XOR_POINTS[1].0
    } else {
        XOR_POINTS[0].0
    }
}

/// Residual `v_t = f_t − a_i(t)·η·xᵢ` for filter `j` of `group`, where
/// `a_i(t)` counts the iterations before `t` at which point `i` violated its
/// margin. `ok` iff `v_t·xᵢ > 0` and `|v_t·x_c| < 2η`, with `x_c = x₂` for
/// `i ∈ {1,3}` (`w` filters) and `x_c = x₁` for `i ∈ {2,4}` (`u` filters).
///
/// Needs a trace recorded at [`TraceLevel::Full`].
pub fn clustering_decomposition_xor<T: Scalar>(
    trace: &gd::TrainTrace<T>,
    eta: f64,
    group: Group,
    j: usize,
    i: usize,
) -> Result<Vec<ClusterStep>> {
    let expected = match group {
        Group::W => [1, 3],
        Group::U => [2, 4],
    };
    if !expected.contains(&i) {
        return Err(invalid(format!("point {i} is not tracked for {group:?} filters")));
    }
    let first = trace
        .records
        .first()
        .and_then(|r| r.snapshot.as_ref())
        .ok_or_else(|| invalid("trace has no weight snapshots"))?;
    let snap0 = XorSetSnapshot::of(first, 0);
    if !snap0.set(group, i).contains(&j) {
        return Err(invalid(format!("filter {j} is not in the initial set of point {i}")));
    }
    let x = xor_point(i)?.vector::<f64>();
    let c = companion(i).vector::<f64>();
    trace
        .records
        .iter()
        .map(|r| {
            let w = r.snapshot.as_ref().ok_or_else(|| invalid("trace has no weight snapshots"))?;
            let f = w.group(group)[j];
            let a = r.counters[i - 1];
            let v = [f[0].as_f64() - a as f64 * eta * x[0], f[1].as_f64() - a as f64 * eta * x[1]];
            let along = v[0] * x[0] + v[1] * x[1];
            let across = v[0] * c[0] + v[1] * c[1];
            Ok(ClusterStep {
                t: r.t,
                a,
                v,
                ok: along > 0.0 && across.abs() < 2.0 * eta,
            })
        })
        .collect()
}

/// Streaming version of [`clustering_decomposition_xor`] over all eligible
/// filters, so long runs need not store snapshots.
#[derive(Clone, Debug, Default)]
pub struct XorClusteringMonitor {
    initial: Option<XorSetSnapshot>,
    /// Iterations at which some eligible filter failed the check.
    pub failures: Vec<usize>,
    pub checked: usize,
}

impl<T: Scalar> Monitor<T> for XorClusteringMonitor {
    fn observe(&mut self, view: &StepView<'_, T>) {
        let snap = self.initial.get_or_insert_with(|| XorSetSnapshot::of(view.weights, view.t));
        let eta = view.hp.eta();
        let mut ok = true;
        for (group, points) in [(Group::W, [1, 3]), (Group::U, [2, 4])] {
            for i in points {
                let x = XOR_POINTS[i - 1].0.vector::<f64>();
                let c = companion(i).vector::<f64>();
                let a = view.counters[i - 1] as f64;
                for &j in snap.set(group, i) {
                    let f = view.weights.group(group)[j];
                    let v = [f[0].as_f64() - a * eta * x[0], f[1].as_f64() - a * eta * x[1]];
                    let along = v[0] * x[0] + v[1] * x[1];
                    let across = v[0] * c[0] + v[1] * c[1];
                    ok &= along > 0.0 && across.abs() < 2.0 * eta;
                }
            }
        }
        self.checked += 1;
        if !ok {
            self.failures.push(view.t);
        }
    }
}

/// `arccos((1 − 2c)/(1 + c))` in degrees.
pub fn xor_angle_threshold_deg(c_eta: f64) -> f64 {
    ((1.0 - 2.0 * c_eta) / (1.0 + c_eta)).clamp(-1.0, 1.0).acos().to_degrees()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    pub threshold_deg: f64,
    pub max_angle_deg: f64,
    /// Eligible filters checked.
    pub checked: usize,
    pub within: usize,
    pub ok: bool,
}

/// Angle of each eligible filter (`j ∈ W₀⁺(i)`, `i ∈ {1,3}`, and
/// `j ∈ U₀⁺(i)`, `i ∈ {2,4}`) to its point against the threshold.
pub fn final_angle_check_xor<T: Scalar>(w_final: &WeightMatrix<T>, initial: &XorSetSnapshot, c_eta: f64) -> AngleReport {
    let threshold_deg = xor_angle_threshold_deg(c_eta);
    let mut max_angle_deg: f64 = 0.0;
    let (mut checked, mut within) = (0, 0);
    for (group, points) in [(Group::W, [1, 3]), (Group::U, [2, 4])] {
        for i in points {
            let x = XOR_POINTS[i - 1].0.vector::<T>();
            for &j in initial.set(group, i) {
                let a = angle2_deg(w_final.group(group)[j], x);
                checked += 1;
                if a <= threshold_deg {
                    within += 1;
                }
                max_angle_deg = max_angle_deg.max(if a.is_nan() { f64::INFINITY } else { a });
            }
        }
    }
    AngleReport {
        threshold_deg,
        max_angle_deg,
        checked,
        within,
        ok: within == checked,
    }
}

/// `⌈16√k / (√k − 2)⌉`, the iteration bound for `k > 16`.
pub fn xor_iteration_bound(k: usize) -> Result<usize> {
    if k <= 16 {
        return Err(invalid(format!("the iteration bound needs k > 16, got {k}")));
    }
    let s = (k as f64).sqrt();
    Ok((16.0 * s / (s - 2.0)).ceil() as usize)
}

/// Default XOR verification hyperparameters for `k` channels.
pub fn xor_default_hp(k: usize, c_eta: f64) -> HyperParams {
    HyperParams {
        k,
        c_eta,
        sigma_g: HyperParams::sigma_bound(k, c_eta),
        gamma: 1.0,
        max_iters: 10_000,
        stop_rule: StopRule::ZeroLoss,
    }
}

/// Initialization event of the small-network regime: `W₀⁺(1)`, `W₀⁺(3)`,
/// `U₀⁺(2)` or `U₀⁺(4)` is empty.
pub fn under_explored(snapshot: &XorSetSnapshot) -> bool {
    [1, 3].iter().any(|&i| snapshot.set(Group::W, i).is_empty()) || [2, 4].iter().any(|&i| snapshot.set(Group::U, i).is_empty())
}

/// Outcome of one XOR training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XorRunReport {
    pub seed_index: u64,
    pub endpoint: Endpoint,
    pub final_loss: f64,
    pub misclassified: usize,
    pub under_explored: bool,
    pub exploration: Option<ExplorationReport>,
    pub iteration_bound: Option<usize>,
    pub within_iteration_bound: Option<bool>,
    pub clustering_ok: bool,
    pub clustering_failures: usize,
    pub angles: Option<AngleReport>,
    pub any_tie: bool,
}

/// Trains on the four XOR points from a fresh initialization drawn from `rng`.
pub fn xor_run<R: Rng + ?Sized>(
    hp: &HyperParams,
    seed_index: u64,
    rng: &mut R,
) -> Result<(XorRunReport, WeightMatrix<f64>, WeightMatrix<f64>)> {
    let set = xor_training_set();
    let w0: WeightMatrix<f64> = gd::init_gaussian(hp.k, hp.sigma_g, rng)?;
    let snap0 = XorSetSnapshot::of(&w0, 0);
    let mut clustering = XorClusteringMonitor::default();
    let (w, trace, endpoint) = gd::train(&w0, &set, hp, TraceLevel::Off, &mut [&mut clustering])?;
    let misclassified = trace
        .last
        .outputs
        .iter()
        .zip(set.examples())
        .filter(|(n, e)| **n * e.label.sign() as f64 <= 0.0)
        .count();
    let exploration = (hp.k > 16).then(|| check_exploration_xor(&snap0, hp.k)).transpose()?;
    let iteration_bound = xor_iteration_bound(hp.k).ok();
    let angles = (endpoint.kind == EndpointKind::GlobalMin).then(|| final_angle_check_xor(&w, &snap0, hp.c_eta));
    let report = XorRunReport {
        seed_index,
        endpoint,
        final_loss: trace.last.loss,
        misclassified,
        under_explored: under_explored(&snap0),
        exploration,
        iteration_bound,
        within_iteration_bound: iteration_bound.map(|b| endpoint.kind == EndpointKind::GlobalMin && endpoint.iteration <= b),
        clustering_ok: clustering.failures.is_empty(),
        clustering_failures: clustering.failures.len(),
        angles,
        any_tie: trace.any_tie,
    };
    Ok((report, w0, w))
}

/// Many seeded XOR runs.
pub fn xor_runs(hp: &HyperParams, trials: usize, seed: u64, threads: Option<usize>) -> Result<Vec<XorRunReport>> {
    try_run_trials(seed, trials, threads, |i, rng| xor_run(hp, i, rng).map(|r| r.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmallXorReport {
    pub k: usize,
    /// Runs ending at a local minimum that misclassifies at least one point.
    pub erring_local_min: Proportion,
    /// Runs ending at a local minimum (any).
    pub local_min: Proportion,
    /// Local-minimum runs that classify all four points correctly (expected 0).
    pub local_min_without_error: usize,
    /// Frequency of the under-exploration event at initialization.
    pub init_event: Proportion,
}

/// Monte Carlo estimate for the small network: training outcomes over
/// `trials` runs and the initialization event over `init_trials` draws.
/// Also returns the per-run reports.
pub fn montecarlo_small_xor(
    hp: &HyperParams,
    trials: usize,
    init_trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<(SmallXorReport, Vec<XorRunReport>)> {
    let reports = xor_runs(hp, trials, seed, threads)?;
    let is_local = |r: &XorRunReport| r.endpoint.kind == EndpointKind::LocalMin;
    let init = try_run_trials(seed ^ 0x5eed_1a17, init_trials, threads, |_, rng| {
        let w0: WeightMatrix<f64> = gd::init_gaussian(hp.k, hp.sigma_g, rng)?;
        Ok(under_explored(&XorSetSnapshot::of(&w0, 0)))
    })?;
    let report = SmallXorReport {
        k: hp.k,
        erring_local_min: Proportion::count(reports.iter().map(|r| is_local(r) && r.misclassified > 0)),
        local_min: Proportion::count(reports.iter().map(is_local)),
        local_min_without_error: reports.iter().filter(|r| is_local(r) && r.misclassified == 0).count(),
        init_event: Proportion::count(init),
    };
    Ok((report, reports))
}
