//! Per-iteration checks for XORD training on all-diverse sets.
//!
//! Each monitor counts violations; `first_violation` keeps the earliest
//! iteration for diagnostics. They read the first positive and the first
//! negative example as `x⁺` and `x⁻`.

use serde::{Deserialize, Serialize};

use super::XordSetSnapshot;
use crate::gd::{dot_pattern, Group, Monitor, StepView};
use crate::patterns::{Label, Pattern};
use crate::scalar::Scalar;

fn first_of<T>(view: &StepView<'_, T>, label: Label) -> Option<usize> {
    view.set.examples().iter().position(|e| e.label == label)
}

/// `S⁺ = Σ_{j ∈ W⁺(1) ∪ W⁺(3)} maxₗ σ(wʲ·x⁺ₗ)` for a diverse `x⁺`.
pub fn s_plus<T: Scalar>(w: &crate::gd::WeightMatrix<T>) -> f64 {
    w.w.iter()
        .filter_map(|f| {
            let (p, _) = super::argmax_pattern(*f, &Pattern::ALL);
            p.is_positive().then(|| dot_pattern(*f, p).relu().as_f64())
        })
        .sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationLog {
    pub checked: usize,
    pub violations: usize,
    pub first_violation: Option<usize>,
}

impl ViolationLog {
    fn record(&mut self, t: usize, ok: bool) {
        self.checked += 1;
        if !ok {
            self.violations += 1;
            self.first_violation.get_or_insert(t);
        }
    }
}

/// `N(x⁺) ≤ γ + 3c`, `−N(x⁻) ≤ 1 + 3c` and `S⁺ ≤ γ + 1 + 8c`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValueBoundMonitor {
    pub log: ViolationLog,
    pub max_pos_output: f64,
    pub max_neg_output: f64,
    pub max_s_plus: f64,
}

impl<T: Scalar> Monitor<T> for ValueBoundMonitor {
    fn observe(&mut self, view: &StepView<'_, T>) {
        let (Some(ip), Some(in_)) = (first_of(view, Label::Positive), first_of(view, Label::Negative)) else {
            return;
        };
        let c = view.hp.c_eta;
        let g = view.hp.gamma;
        let np = view.eval.outputs[ip].as_f64();
        let nn = -view.eval.outputs[in_].as_f64();
        let s = s_plus(view.weights);
        if view.t == 0 {
            self.max_pos_output = np;
            self.max_neg_output = nn;
            self.max_s_plus = s;
        }
        self.max_pos_output = self.max_pos_output.max(np);
        self.max_neg_output = self.max_neg_output.max(nn);
        self.max_s_plus = self.max_s_plus.max(s);
        let ok = np <= g + 3.0 * c && nn <= 1.0 + 3.0 * c && s <= g + 1.0 + 8.0 * c;
        self.log.record(view.t, ok);
    }
}

/// `W_t⁺(i) = W₀⁺(i)` for `i ∈ {1,3}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SetStabilityMonitor {
    initial: Option<[Vec<usize>; 2]>,
    pub log: ViolationLog,
}

impl<T: Scalar> Monitor<T> for SetStabilityMonitor {
    fn observe(&mut self, view: &StepView<'_, T>) {
        let snap = XordSetSnapshot::of(view.weights, view.t);
        let now = [snap.plus_set(Group::W, Pattern::P1), snap.plus_set(Group::W, Pattern::P3)];
        let initial = self.initial.get_or_insert_with(|| now.clone());
        let ok = *initial == now;
        self.log.record(view.t, ok);
    }
}

/// `S⁺_{t+1} ≥ S⁺_t` at every step taken with `N_t(x⁺) < γ`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SPlusMonitor {
    pub log: ViolationLog,
}

impl<T: Scalar> Monitor<T> for SPlusMonitor {
    fn observe(&mut self, view: &StepView<'_, T>) {
        let (Some(next), Some(ip)) = (view.next, first_of(view, Label::Positive)) else {
            return;
        };
        if view.eval.outputs[ip].as_f64() >= view.hp.gamma {
            return;
        }
        let ok = s_plus(next) >= s_plus(view.weights);
        self.log.record(view.t, ok);
    }
}

/// Residual `r = wʲ_t − a⁺(t)·η·pᵢ` for `j ∈ W₀⁺(i)`, `i ∈ {1,3}`, where
/// `a⁺(t)` counts the iterations before `t` with `N(x⁺) < γ`. Checks
/// `r·pᵢ > 0` and `|r·p2| < 2η`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusteringMonitor {
    initial: Option<Vec<(usize, Pattern)>>,
    pub log: ViolationLog,
    /// Largest `|r·p2| / η` seen.
    pub max_cross_ratio: f64,
}

impl<T: Scalar> Monitor<T> for ClusteringMonitor {
    fn observe(&mut self, view: &StepView<'_, T>) {
        let Some(ip) = first_of(view, Label::Positive) else {
            return;
        };
        let members = self.initial.get_or_insert_with(|| {
            let snap = XordSetSnapshot::of(view.weights, view.t);
            [Pattern::P1, Pattern::P3]
                .into_iter()
                .flat_map(|p| snap.plus_set(Group::W, p).into_iter().map(move |j| (j, p)))
                .collect()
        });
        let eta = view.hp.eta();
        let a = view.counters[ip] as f64;
        let p2 = Pattern::P2.vector::<f64>();
        let mut ok = true;
        for &(j, p) in members.iter() {
            let f = view.weights.w[j];
            let x = p.vector::<f64>();
            let r = [f[0].as_f64() - a * eta * x[0], f[1].as_f64() - a * eta * x[1]];
            let along = r[0] * x[0] + r[1] * x[1];
            let across = (r[0] * p2[0] + r[1] * p2[1]).abs();
            self.max_cross_ratio = self.max_cross_ratio.max(across / eta);
            ok &= along > 0.0 && across < 2.0 * eta;
        }
        self.log.record(view.t, ok);
    }
}

/// Compares each step with the closed-form update
/// `wʲ ← wʲ + η(1[N(x⁺) < γ]·p_{i₁} − 1[−N(x⁻) < 1]·p_{i₂})` for
/// `j ∈ W⁺(i₁) ∩ W⁻(i₂)` (signs flipped for `u`), bit for bit. Steps at
/// which a tie fired are skipped and counted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GradientEquivalenceMonitor {
    pub log: ViolationLog,
    pub skipped_ties: usize,
}

impl<T: Scalar> Monitor<T> for GradientEquivalenceMonitor {
    fn observe(&mut self, view: &StepView<'_, T>) {
        let (Some(next), Some(ip), Some(in_)) = (view.next, first_of(view, Label::Positive), first_of(view, Label::Negative)) else {
            return;
        };
        let snap = XordSetSnapshot::of(view.weights, view.t);
        if snap.tie || view.eval.tie {
            self.skipped_ties += 1;
            return;
        }
        let pos_active = view.eval.violating[ip] as i64;
        let neg_active = view.eval.violating[in_] as i64;
        let eta = view.eta;
        let mut ok = true;
        for (g, sign) in [(Group::W, 1i64), (Group::U, -1i64)] {
            let gidx = if g == Group::W { 0 } else { 1 };
            for (j, f) in view.weights.group(g).iter().enumerate() {
                let p1 = snap.plus[gidx][j].coords();
                let p2 = snap.minus[gidx][j].coords();
                let dir = |c: usize| sign * (pos_active * p1[c] as i64 - neg_active * p2[c] as i64);
                let expect = [f[0] + eta * T::of(dir(0) as f64), f[1] + eta * T::of(dir(1) as f64)];
                let got = next.group(g)[j];
                ok &= expect[0] == got[0] && expect[1] == got[1];
            }
        }
        self.log.record(view.t, ok);
    }
}
