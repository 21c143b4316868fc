//! XOR-detection experiments: argmax set tracking, pattern detection,
//! recovery of the ground-truth rule, trajectory monitors, theorem trials and
//! the decoy, channel-sweep, margin and symmetry experiments.

mod bounds;
mod experiments;
mod monitors;
mod trials;

pub use bounds::{sample_complexity_bounds, SampleComplexity};
pub use experiments::{
    decoy_experiment, decoy_hyperparams, decoy_training_set, decoy_weights, gamma_comparison, pair_gamma_rows, run_sweep_trial,
    summarize_sweep, sweep_channels, symmetry_check, symmetry_check_on, DecoyReport, DecoyVariant, GammaRow, SweepConfig, SweepRow,
    SweepTrial, SymmetryReport,
};
pub use monitors::{
    s_plus, ClusteringMonitor, GradientEquivalenceMonitor, SPlusMonitor, SetStabilityMonitor, ValueBoundMonitor, ViolationLog,
};
pub use trials::{
    main_regime_violations, small_regime_violations, theorem_main_trial, theorem_small_trial, InvariantSummary, MainTrialConfig,
    SmallTrialConfig, TrialReport,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::gd::{dot_pattern, Group, WeightMatrix};
use crate::patterns::{BinaryInput, Label, Pattern, PatternSet};
use crate::scalar::{angle2_deg, Scalar};

/// Index of the largest `f·p` over `candidates`, lowest index on ties, and
/// whether a tie occurred.
fn argmax_pattern<T: Scalar>(f: [T; 2], candidates: &[Pattern]) -> (Pattern, bool) {
    let mut best = candidates[0];
    let mut best_v = dot_pattern(f, best);
    let mut tie = false;
    for &p in &candidates[1..] {
        let v = dot_pattern(f, p);
        if v > best_v {
            best = p;
            best_v = v;
            tie = false;
        } else if v == best_v {
            tie = true;
        }
    }
    (best, tie)
}

/// Argmax set memberships of every filter.
///
/// `plus[g][j]` is the pattern maximizing `f·p` over all four patterns and
/// `minus[g][j]` the maximizer over `{p2, p4}`, where `g = 0` for `w` and
/// `g = 1` for `u`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct XordSetSnapshot {
    pub t: usize,
    pub plus: [Vec<Pattern>; 2],
    pub minus: [Vec<Pattern>; 2],
    pub tie: bool,
}

fn gi(g: Group) -> usize {
    match g {
        Group::W => 0,
        Group::U => 1,
    }
}

impl XordSetSnapshot {
    pub fn of<T: Scalar>(w: &WeightMatrix<T>, t: usize) -> Self {
        let mut tie = false;
        let mut assign = |filters: &[[T; 2]], cands: &[Pattern]| -> Vec<Pattern> {
            filters
                .iter()
                .map(|f| {
                    let (p, tt) = argmax_pattern(*f, cands);
                    tie |= tt;
                    p
                })
                .collect()
        };
        let plus = [assign(&w.w, &Pattern::ALL), assign(&w.u, &Pattern::ALL)];
        let neg = [Pattern::P2, Pattern::P4];
        let minus = [assign(&w.w, &neg), assign(&w.u, &neg)];
        XordSetSnapshot { t, plus, minus, tie }
    }

    /// `W⁺(i)` or `U⁺(i)` as a sorted index list.
    pub fn plus_set(&self, g: Group, p: Pattern) -> Vec<usize> {
        self.plus[gi(g)]
            .iter()
            .enumerate()
            .filter(|(_, q)| **q == p)
            .map(|(j, _)| j)
            .collect()
    }

    /// `W⁻(i)` or `U⁻(i)` for `i ∈ {2,4}`.
    pub fn minus_set(&self, g: Group, p: Pattern) -> Vec<usize> {
        self.minus[gi(g)]
            .iter()
            .enumerate()
            .filter(|(_, q)| **q == p)
            .map(|(j, _)| j)
            .collect()
    }
}

/// Pattern responses `D_v` and detection at confidence `c_d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    /// `D` for patterns 1 to 4: `Σ σ(wⁱ·v)` for positive patterns and
    /// `Σ σ(uⁱ·v)` for negative ones.
    pub values: [f64; 4],
    pub c_d: f64,
    pub detected: [bool; 4],
    pub all_detected: bool,
}

pub fn detection_confidence<T: Scalar>(w: &WeightMatrix<T>, c_d: f64) -> Result<DetectionReport> {
    if !(c_d >= 0.0) {
        return Err(invalid(format!("c_d must be >= 0, got {c_d}")));
    }
    let values = Pattern::ALL.map(|p| {
        let filters = if p.is_positive() { &w.w } else { &w.u };
        filters.iter().map(|f| dot_pattern(*f, p).relu()).sum::<T>().as_f64()
    });
    let detected = values.map(|v| v > c_d);
    Ok(DetectionReport {
        values,
        c_d,
        detected,
        all_detected: detected.iter().all(|&d| d),
    })
}

/// Network decision on one pattern-set class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassDecision {
    pub class: PatternSet,
    pub output: f64,
    /// `None` when the output is exactly 0.
    pub decision: Option<Label>,
    pub feasible: bool,
    pub correct: bool,
}

/// Decisions on all 15 classes. The network output depends only on the
/// pattern set, so each class is evaluated on its members.
pub fn class_decisions<T: Scalar>(w: &WeightMatrix<T>, d: usize) -> Vec<ClassDecision> {
    PatternSet::all()
        .map(|class| {
            let x = BinaryInput::new(class.members()).expect("non-empty");
            let output = crate::gd::xord_forward(w, &x).as_f64();
            let decision = if output > 0.0 {
                Some(Label::Positive)
            } else if output < 0.0 {
                Some(Label::Negative)
            } else {
                None
            };
            ClassDecision {
                class,
                output,
                decision,
                feasible: class.feasible(d),
                correct: decision == Some(class.label()),
            }
        })
        .collect()
}

/// Decision map for [`crate::patterns::exact_test_error`]; a zero output is
/// counted as wrong.
pub fn decision_map(decisions: &[ClassDecision]) -> BTreeMap<PatternSet, Label> {
    decisions
        .iter()
        .map(|c| {
            let label = c.decision.filter(|_| c.correct).unwrap_or(match c.class.label() {
                Label::Positive => Label::Negative,
                Label::Negative => Label::Positive,
            });
            (c.class, label)
        })
        .collect()
}

/// Whether the network agrees with the ground-truth rule on every class
/// that fits in `d` slots.
pub fn recovers_fstar<T: Scalar>(w: &WeightMatrix<T>, d: usize) -> Result<(bool, Vec<ClassDecision>)> {
    if d == 0 {
        return Err(invalid("d must be >= 1"));
    }
    let decisions = class_decisions(w, d);
    let ok = decisions.iter().filter(|c| c.feasible).all(|c| c.correct);
    Ok((ok, decisions))
}

/// Canonical diverse pair `((p1,p2,p3,p4,p1,…), (p2,p4,p2,…))` for `d ≥ 4`.
pub fn diverse_pair(d: usize) -> Result<[BinaryInput; 2]> {
    if d < 4 {
        return Err(invalid(format!("a diverse positive point needs d >= 4, got {d}")));
    }
    Ok([
        BinaryInput::canonical(PatternSet::DIVERSE_POSITIVE, d).expect("feasible"),
        BinaryInput::canonical(PatternSet::DIVERSE_NEGATIVE, d).expect("feasible"),
    ])
}

/// `α(k) = (k/4 + 2√k)/(k/4 − 2√k)`.
pub fn alpha(k: usize) -> f64 {
    let k = k as f64;
    (k / 4.0 + 2.0 * k.sqrt()) / (k / 4.0 - 2.0 * k.sqrt())
}

/// Largest confidence at which all patterns are guaranteed to be detected:
/// `(1 − 5c/4)/(α(k) + 1)`.
pub fn detection_threshold(k: usize, c_eta: f64) -> f64 {
    (1.0 - 1.25 * c_eta) / (alpha(k) + 1.0)
}

/// `⌈28(γ + 1 + 8c)/c⌉`.
pub fn main_budget(gamma: f64, c_eta: f64) -> usize {
    (28.0 * (gamma + 1.0 + 8.0 * c_eta) / c_eta).ceil() as usize
}

/// `arccos((γ − 1 − 2c)/(γ − 1 + c))` in degrees.
pub fn main_angle_threshold_deg(gamma: f64, c_eta: f64) -> f64 {
    ((gamma - 1.0 - 2.0 * c_eta) / (gamma - 1.0 + c_eta))
        .clamp(-1.0, 1.0)
        .acos()
        .to_degrees()
}

/// Angles between the final `w` filters of `W₀⁺(1) ∪ W₀⁺(3)` and their pattern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAngles {
    pub threshold_deg: f64,
    pub max_angle_deg: f64,
    pub checked: usize,
    pub within: usize,
    pub ok: bool,
}

pub fn cluster_angles<T: Scalar>(w_final: &WeightMatrix<T>, initial: &XordSetSnapshot, threshold_deg: f64) -> ClusterAngles {
    let mut max_angle_deg: f64 = 0.0;
    let (mut checked, mut within) = (0, 0);
    for p in [Pattern::P1, Pattern::P3] {
        for j in initial.plus_set(Group::W, p) {
            let a = angle2_deg(w_final.w[j], p.vector::<T>());
            let a = if a.is_nan() { f64::INFINITY } else { a };
            checked += 1;
            within += (a <= threshold_deg) as usize;
            max_angle_deg = max_angle_deg.max(a);
        }
    }
    ClusterAngles {
        threshold_deg,
        max_angle_deg,
        checked,
        within,
        ok: within == checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd::init_gaussian;
    use crate::patterns::{exact_test_error, DistributionSpec};
    use crate::rng::seeded;
    use Pattern::*;

    fn realizing() -> WeightMatrix<f64> {
        WeightMatrix::from_patterns(&[(3.0, P1), (3.0, P3)], &[(1.0, P2), (1.0, P4)]).unwrap()
    }

    #[test]
    fn formula_values() {
        assert!((alpha(120) - 6.416).abs() < 1e-3);
        assert!((detection_threshold(120, 1.0 / 410.0) - 0.1344).abs() < 1e-4);
        let t = main_budget(8.0, 1.0 / 410.0);
        assert!((t as i64 - 103_544).abs() <= 1, "{t}");
        assert!((main_angle_threshold_deg(8.0, 1.0 / 410.0) - 2.62).abs() < 0.01);
    }

    #[test]
    fn realizing_net_recovers() {
        let (ok, decisions) = recovers_fstar(&realizing(), 10).unwrap();
        assert!(ok);
        assert_eq!(decisions.len(), 15);
        // Scaling w by gamma keeps every class correct.
        let scaled = WeightMatrix::<f64>::from_patterns(&[(24.0, P1), (24.0, P3)], &[(1.0, P2), (1.0, P4)]).unwrap();
        assert!(recovers_fstar(&scaled, 4).unwrap().0);
    }

    #[test]
    fn decoy_net_misses_classes_without_p1() {
        let decoy = WeightMatrix::<f64>::from_patterns(&[(3.0, P1), (3.0, P1)], &[(1.0, P2), (1.0, P2)]).unwrap();
        let (ok, decisions) = recovers_fstar(&decoy, 4).unwrap();
        assert!(!ok);
        for c in decisions {
            // {4} gets output exactly zero, which counts as wrong.
            let expect_wrong = !c.class.contains(P1) && (c.class.contains(P3) || !c.class.contains(P2));
            assert_eq!(!c.correct, expect_wrong, "{}", c.class);
        }
    }

    #[test]
    fn zero_net_misclassifies_positives() {
        let (ok, decisions) = recovers_fstar(&WeightMatrix::<f64>::zeros(2), 4).unwrap();
        assert!(!ok);
        for c in &decisions {
            assert_eq!(c.decision, None);
            assert!(!c.correct);
        }
        let map = decision_map(&decisions);
        let dist = DistributionSpec::uniform(4).unwrap();
        assert!((exact_test_error(&map, &dist).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detection_examples() {
        let r = detection_confidence(&realizing(), 1.0).unwrap();
        assert_eq!(r.values, [6.0, 2.0, 6.0, 2.0]);
        assert!(r.all_detected);

        let decoy = WeightMatrix::<f64>::from_patterns(&[(3.0, P1), (3.0, P1)], &[(1.0, P2), (1.0, P2)]).unwrap();
        let r = detection_confidence(&decoy, 0.0).unwrap();
        assert_eq!(r.values[2], 0.0);
        assert!(!r.detected[2]);

        for c_d in [0.0, 0.5, 3.0] {
            assert!(detection_confidence(&WeightMatrix::<f64>::zeros(3), c_d)
                .unwrap()
                .detected
                .iter()
                .all(|d| !d));
        }
        assert!(detection_confidence(&realizing(), -1.0).is_err());
    }

    #[test]
    fn sets_partition_without_ties() {
        let mut rng = seeded(5);
        for _ in 0..20 {
            let w: WeightMatrix<f64> = init_gaussian(40, 0.1, &mut rng).unwrap();
            let s = XordSetSnapshot::of(&w, 0);
            assert!(!s.tie);
            for g in [Group::W, Group::U] {
                let total: usize = Pattern::ALL.iter().map(|&p| s.plus_set(g, p).len()).sum();
                assert_eq!(total, 40);
                assert_eq!(s.minus_set(g, P2).len() + s.minus_set(g, P4).len(), 40);
                assert!(s.minus_set(g, P1).is_empty());
            }
        }
    }

    #[test]
    fn decisions_do_not_depend_on_representative() {
        let mut rng = seeded(8);
        let w: WeightMatrix<f64> = init_gaussian(6, 1.0, &mut rng).unwrap();
        for c in class_decisions(&w, 8) {
            for _ in 0..10 {
                let x = crate::patterns::sample_arrangement(c.class, 8, &mut rng);
                assert_eq!(crate::gd::xord_forward(&w, &x), c.output);
            }
        }
    }
}
