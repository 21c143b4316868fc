use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{class_decisions, decision_map, detection_confidence, diverse_pair, main_budget, ClassDecision, DetectionReport};
use crate::error::{invalid, Result};
use crate::gd::{self, Endpoint, HyperParams, StopRule, TraceLevel, TrainingSet, WeightMatrix};
use crate::harness::try_run_trials;
use crate::patterns::{exact_test_error, sample_arrangement, BinaryInput, DistributionSpec, Label, Pattern, PatternSet};
use crate::rng::trial_rng;

// ---------------------------------------------------------------------------
// Decoy training sets

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoyVariant {
    /// Six diverse positives and six diverse negatives.
    AllDiverse,
    /// As `AllDiverse` with the last negative replaced by `(p2, …, p2)`.
    WithNondiverse,
}

impl std::str::FromStr for DecoyVariant {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all-diverse" => Ok(DecoyVariant::AllDiverse),
            "with-nondiverse" => Ok(DecoyVariant::WithNondiverse),
            other => Err(invalid(format!("unknown decoy variant {other:?}"))),
        }
    }
}

/// Twelve labeled points for `variant`, with random arrangements of the
/// diverse classes.
pub fn decoy_training_set<R: Rng + ?Sized>(variant: DecoyVariant, d: usize, rng: &mut R) -> Result<Vec<(BinaryInput, Label)>> {
    if d < 4 {
        return Err(invalid(format!("diverse positives need d >= 4, got {d}")));
    }
    let mut data = Vec::with_capacity(12);
    for _ in 0..6 {
        data.push((sample_arrangement(PatternSet::DIVERSE_POSITIVE, d, rng), Label::Positive));
    }
    for _ in 0..6 {
        data.push((sample_arrangement(PatternSet::DIVERSE_NEGATIVE, d, rng), Label::Negative));
    }
    if variant == DecoyVariant::WithNondiverse {
        data[11] = (BinaryInput::new(vec![Pattern::P2; d])?, Label::Negative);
    }
    Ok(data)
}

/// `w = (3p1, 3p1)`, `u = (p2, p2)`: zero loss on any all-diverse set at
/// `γ ≤ 8`, yet blind to `p3`.
pub fn decoy_weights() -> WeightMatrix<f64> {
    WeightMatrix::from_patterns(&[(3.0, Pattern::P1), (3.0, Pattern::P1)], &[(1.0, Pattern::P2), (1.0, Pattern::P2)]).expect("valid")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoyReport {
    pub variant: DecoyVariant,
    pub k: usize,
    pub gamma: f64,
    pub c_eta: f64,
    pub d: usize,
    pub endpoint: Endpoint,
    pub final_loss: f64,
    pub train_error: f64,
    pub recovered_fstar: bool,
    pub decisions: Vec<ClassDecision>,
    pub misclassified: Vec<PatternSet>,
    pub exact_test_error: f64,
    pub detection: DetectionReport,
}

/// Trains a `k`-channel network on a decoy set. Returns the report and the
/// initial and final weights.
pub fn decoy_experiment(
    variant: DecoyVariant,
    hp: &HyperParams,
    d: usize,
    master_seed: u64,
    index: u64,
) -> Result<(DecoyReport, WeightMatrix<f64>, WeightMatrix<f64>)> {
    let mut rng = trial_rng(master_seed, index);
    let data = decoy_training_set(variant, d, &mut rng)?;
    let set = TrainingSet::xord(&data)?;
    let w0: WeightMatrix<f64> = gd::init_gaussian(hp.k, hp.sigma_g, &mut rng)?;
    let (w, trace, endpoint) = gd::train(&w0, &set, hp, TraceLevel::Off, &mut [])?;
    let decisions = class_decisions(&w, d);
    let recovered = decisions.iter().filter(|c| c.feasible).all(|c| c.correct);
    let dist = DistributionSpec::uniform(d)?;
    let report = DecoyReport {
        variant,
        k: hp.k,
        gamma: hp.gamma,
        c_eta: hp.c_eta,
        d,
        endpoint,
        final_loss: trace.last.loss,
        train_error: trace.last.train_error(&set),
        recovered_fstar: recovered,
        misclassified: decisions.iter().filter(|c| c.feasible && !c.correct).map(|c| c.class).collect(),
        exact_test_error: exact_test_error(&decision_map(&decisions), &dist)?,
        detection: detection_confidence(&w, 0.0)?,
        decisions,
    };
    Ok((report, w0, w))
}

/// Default decoy hyperparameters for `k` channels.
pub fn decoy_hyperparams(k: usize, gamma: f64, c_eta: f64) -> HyperParams {
    HyperParams {
        k,
        c_eta,
        sigma_g: HyperParams::sigma_bound(k, c_eta),
        gamma,
        max_iters: main_budget(gamma, c_eta),
        stop_rule: StopRule::ZeroLoss,
    }
}

// ---------------------------------------------------------------------------
// Channel sweep

/// Protocol of the channel-count sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub channels: Vec<usize>,
    pub m_pos: usize,
    pub m_neg: usize,
    pub d: usize,
    pub p_plus: f64,
    pub p_minus: f64,
    pub prob_positive: f64,
    pub sigma_g: f64,
    /// Learning rate is `c_eta / k`.
    pub c_eta: f64,
    pub gamma: f64,
    pub patience: usize,
    pub max_iters: usize,
    pub runs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            channels: vec![4, 6, 8, 20, 50, 100, 200],
            m_pos: 6,
            m_neg: 6,
            d: 10,
            p_plus: 0.5,
            p_minus: 0.9,
            prob_positive: 0.5,
            sigma_g: 1e-5,
            c_eta: 0.04,
            gamma: 1.0,
            patience: 20,
            max_iters: 30_000,
            runs: 100,
        }
    }
}

impl SweepConfig {
    pub fn distribution(&self) -> Result<DistributionSpec> {
        DistributionSpec::from_diversity(self.d, self.p_plus, self.p_minus, self.prob_positive)
    }

    fn hyperparams(&self, k: usize) -> HyperParams {
        HyperParams {
            k,
            c_eta: self.c_eta,
            sigma_g: self.sigma_g,
            gamma: self.gamma,
            max_iters: self.max_iters,
            stop_rule: StopRule::Patience(self.patience),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTrial {
    pub gamma: f64,
    pub k: usize,
    pub run: u64,
    pub endpoint: Endpoint,
    pub final_loss: f64,
    pub train_error: f64,
    pub zero_train_error: bool,
    pub exact_test_error: f64,
}

/// One sweep run. The training set and initialization depend only on
/// `(master_seed, run)`: runs with the same index see the same data at every
/// channel count and every margin.
pub fn run_sweep_trial(
    cfg: &SweepConfig,
    dist: &DistributionSpec,
    k: usize,
    master_seed: u64,
    run: u64,
) -> Result<(SweepTrial, WeightMatrix<f64>)> {
    let sampler = dist.sampler()?;
    let mut rng = trial_rng(master_seed, run);
    let mut data = Vec::with_capacity(cfg.m_pos + cfg.m_neg);
    for _ in 0..cfg.m_pos {
        data.push((sampler.sample_with_label(Label::Positive, &mut rng)?, Label::Positive));
    }
    for _ in 0..cfg.m_neg {
        data.push((sampler.sample_with_label(Label::Negative, &mut rng)?, Label::Negative));
    }
    let set = TrainingSet::xord(&data)?;
    let w0: WeightMatrix<f64> = gd::init_gaussian(k, cfg.sigma_g, &mut rng)?;
    let (w, trace, endpoint) = gd::train(&w0, &set, &cfg.hyperparams(k), TraceLevel::Off, &mut [])?;
    let train_error = trace.last.train_error(&set);
    let decisions = class_decisions(&w, cfg.d);
    let trial = SweepTrial {
        gamma: cfg.gamma,
        k,
        run,
        endpoint,
        final_loss: trace.last.loss,
        train_error,
        zero_train_error: train_error == 0.0,
        exact_test_error: exact_test_error(&decision_map(&decisions), dist)?,
    };
    Ok((trial, w))
}

/// Per-channel aggregate of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub k: usize,
    pub runs: usize,
    pub zero_train_error_runs: usize,
    pub mean_test_error: f64,
    /// `None` when no run reached zero training error.
    pub mean_test_error_zero_train: Option<f64>,
    pub mean_train_error: f64,
}

pub fn summarize_sweep(trials: &[SweepTrial]) -> Vec<SweepRow> {
    let mut keys: Vec<(u64, usize)> = trials.iter().map(|t| (t.gamma.to_bits(), t.k)).collect();
    keys.dedup();
    let mut rows = Vec::new();
    for (g, k) in keys {
        if rows.iter().any(|r: &SweepRow| r.gamma.to_bits() == g && r.k == k) {
            continue;
        }
        let group: Vec<&SweepTrial> = trials.iter().filter(|t| t.gamma.to_bits() == g && t.k == k).collect();
        let n = group.len();
        let zero: Vec<&&SweepTrial> = group.iter().filter(|t| t.zero_train_error).collect();
        rows.push(SweepRow {
            gamma: f64::from_bits(g),
            k,
            runs: n,
            zero_train_error_runs: zero.len(),
            mean_test_error: group.iter().map(|t| t.exact_test_error).sum::<f64>() / n as f64,
            mean_test_error_zero_train: (!zero.is_empty())
                .then(|| zero.iter().map(|t| t.exact_test_error).sum::<f64>() / zero.len() as f64),
            mean_train_error: group.iter().map(|t| t.train_error).sum::<f64>() / n as f64,
        });
    }
    rows
}

/// All `(k, run)` trials of the sweep in channel-major order, plus the
/// per-channel summary.
pub fn sweep_channels(cfg: &SweepConfig, master_seed: u64, threads: Option<usize>) -> Result<(Vec<SweepRow>, Vec<SweepTrial>)> {
    if cfg.channels.is_empty() || cfg.runs == 0 {
        return Err(invalid("the sweep needs at least one channel count and one run"));
    }
    if cfg.m_pos == 0 || cfg.m_neg == 0 {
        return Err(invalid("the sweep needs positive and negative training points"));
    }
    let dist = cfg.distribution()?;
    let runs = cfg.runs as u64;
    let trials = try_run_trials(master_seed, cfg.channels.len() * cfg.runs, threads, |i, _| {
        let k = cfg.channels[(i / runs) as usize];
        run_sweep_trial(cfg, &dist, k, master_seed, i % runs).map(|r| r.0)
    })?;
    Ok((summarize_sweep(&trials), trials))
}

/// Paired margin comparison row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRow {
    pub k: usize,
    pub gammas: Vec<f64>,
    pub mean_test_error: Vec<f64>,
    pub mean_test_error_zero_train: Vec<Option<f64>>,
    pub zero_train_error_runs: Vec<usize>,
}

/// Runs the sweep once per margin with the same master seed, so run `r`
/// uses the same data and initialization at every margin.
pub fn gamma_comparison(
    cfg: &SweepConfig,
    gammas: &[f64],
    master_seed: u64,
    threads: Option<usize>,
) -> Result<(Vec<SweepRow>, Vec<SweepTrial>)> {
    if gammas.is_empty() {
        return Err(invalid("need at least one gamma"));
    }
    let mut rows = Vec::new();
    let mut trials = Vec::new();
    for &gamma in gammas {
        let c = SweepConfig { gamma, ..cfg.clone() };
        let (r, t) = sweep_channels(&c, master_seed, threads)?;
        rows.extend(r);
        trials.extend(t);
    }
    Ok((rows, trials))
}

/// Regroups per-margin sweep rows by channel count.
pub fn pair_gamma_rows(rows: &[SweepRow]) -> Vec<GammaRow> {
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let rs: Vec<&SweepRow> = rows.iter().filter(|r| r.k == k).collect();
            GammaRow {
                k,
                gammas: rs.iter().map(|r| r.gamma).collect(),
                mean_test_error: rs.iter().map(|r| r.mean_test_error).collect(),
                mean_test_error_zero_train: rs.iter().map(|r| r.mean_test_error_zero_train).collect(),
                zero_train_error_runs: rs.iter().map(|r| r.zero_train_error_runs).collect(),
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Symmetry

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymmetryReport {
    pub ok: bool,
    pub iterations_compared: usize,
    pub first_divergence: Option<usize>,
}

/// Trains from `w0` and from `w0` with `u¹` negated for `iters` iterations
/// and checks that the second trajectory is the first with `u¹` negated, and
/// that the losses agree, bit for bit at every iteration.
pub fn symmetry_check_on(set: &TrainingSet, w0: &WeightMatrix<f64>, hp: &HyperParams, iters: usize) -> Result<SymmetryReport> {
    if iters == 0 {
        return Ok(SymmetryReport {
            ok: true,
            iterations_compared: 0,
            first_divergence: None,
        });
    }
    let hp = HyperParams {
        max_iters: iters,
        stop_rule: StopRule::Budget,
        ..hp.clone()
    };
    let mut mirrored = w0.clone();
    mirrored.u[0] = [-w0.u[0][0], -w0.u[0][1]];
    let (_, a, _) = gd::train(w0, set, &hp, TraceLevel::Full, &mut [])?;
    let (_, b, _) = gd::train(&mirrored, set, &hp, TraceLevel::Full, &mut [])?;
    let bits = |w: &WeightMatrix<f64>| w.to_flat().into_iter().map(f64::to_bits).collect::<Vec<_>>();
    let mut first_divergence = None;
    for (ra, rb) in a.records.iter().zip(&b.records) {
        let (sa, sb) = (ra.snapshot.as_ref().expect("full trace"), rb.snapshot.as_ref().expect("full trace"));
        let mut expect = sa.clone();
        expect.u[0] = [-sa.u[0][0], -sa.u[0][1]];
        if bits(&expect) != bits(sb) || ra.loss.to_bits() != rb.loss.to_bits() {
            first_divergence = Some(ra.t);
            break;
        }
    }
    if first_divergence.is_none() && a.records.len() != b.records.len() {
        first_divergence = Some(a.records.len().min(b.records.len()));
    }
    Ok(SymmetryReport {
        ok: first_divergence.is_none(),
        iterations_compared: a.records.len().min(b.records.len()),
        first_divergence,
    })
}

/// Symmetry check for `k = 2` on the canonical diverse pair.
pub fn symmetry_check(master_seed: u64, index: u64, iters: usize, d: usize, hp: &HyperParams) -> Result<SymmetryReport> {
    if hp.k != 2 {
        return Err(invalid("the symmetry check is defined for k = 2"));
    }
    let set = TrainingSet::xord_labeled(&diverse_pair(d)?)?;
    let w0: WeightMatrix<f64> = gd::init_gaussian(2, hp.sigma_g, &mut trial_rng(master_seed, index))?;
    symmetry_check_on(&set, &w0, hp, iters)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd::hinge_loss;
    use crate::rng::seeded;

    #[test]
    fn decoy_weights_have_zero_loss_on_all_diverse_sets() {
        let mut rng = seeded(1);
        for _ in 0..5 {
            let data = decoy_training_set(DecoyVariant::AllDiverse, 10, &mut rng).unwrap();
            let set = TrainingSet::xord(&data).unwrap();
            assert_eq!(hinge_loss(&decoy_weights(), &set, 8.0).unwrap(), 0.0);
        }
        let data = decoy_training_set(DecoyVariant::WithNondiverse, 10, &mut rng).unwrap();
        assert_eq!(data[11].0.pattern_set().key(), "2");
        assert_eq!(data.iter().filter(|(x, _)| x.is_diverse()).count(), 11);
    }

    #[test]
    fn symmetry_holds_on_diverse_pair() {
        let hp = HyperParams {
            k: 2,
            c_eta: 1.0 / 41.0,
            sigma_g: HyperParams::sigma_bound(2, 1.0 / 41.0),
            gamma: 8.0,
            max_iters: 1,
            stop_rule: StopRule::Budget,
        };
        for i in 0..5 {
            let r = symmetry_check(9, i, 300, 6, &hp).unwrap();
            assert!(r.ok, "{r:?}");
            assert_eq!(r.iterations_compared, 301);
        }
        assert!(symmetry_check(9, 0, 0, 6, &hp).unwrap().ok);
    }

    #[test]
    fn symmetry_can_fail_on_non_diverse_points() {
        let hp = HyperParams {
            k: 2,
            c_eta: 1.0 / 41.0,
            sigma_g: 0.01,
            gamma: 8.0,
            max_iters: 1,
            stop_rule: StopRule::Budget,
        };
        let set = TrainingSet::xord_labeled(&[
            BinaryInput::from_indices(&[1, 1, 1, 1]).unwrap(),
            BinaryInput::from_indices(&[2, 2, 2, 2]).unwrap(),
        ])
        .unwrap();
        let failed = (0..20).any(|i| {
            let w0: WeightMatrix<f64> = gd::init_gaussian(2, 0.01, &mut seeded(i)).unwrap();
            !symmetry_check_on(&set, &w0, &hp, 50).unwrap().ok
        });
        assert!(failed);
    }

    #[test]
    fn sweep_trials_share_data_across_channels() {
        let cfg = SweepConfig {
            channels: vec![4, 8],
            runs: 3,
            max_iters: 2000,
            ..Default::default()
        };
        let (rows, trials) = sweep_channels(&cfg, 11, Some(1)).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(trials.len(), 6);
        assert_eq!(trials.iter().map(|t| t.run).collect::<Vec<_>>(), vec![0, 1, 2, 0, 1, 2]);
        let (again, _) = sweep_channels(&cfg, 11, Some(2)).unwrap();
        assert_eq!(rows, again);
    }
}
