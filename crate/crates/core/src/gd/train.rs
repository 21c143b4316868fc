use serde::{Deserialize, Serialize};

use super::{dot_pattern, Arch, HyperParams, StopRule, TrainingSet, WeightMatrix};
use crate::error::{invalid, Error, Result};
use crate::patterns::{Label, Pattern};
use crate::scalar::Scalar;

const NO_ROUTE: u8 = u8::MAX;

/// Loss, outputs and subgradient at one weight matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation<T> {
    /// Network output per training example.
    pub outputs: Vec<T>,
    pub loss: T,
    /// `y·N(x) < margin(y)` per example.
    pub violating: Vec<bool>,
    /// Some filter had two distinct patterns tied at a positive pooled maximum.
    pub tie: bool,
    pub grad: WeightMatrix<T>,
}

impl<T: Scalar> Evaluation<T> {
    pub fn grad_is_zero(&self) -> bool {
        self.grad.is_zero()
    }

    /// Fraction of examples with `sign(N) ≠ y` (output 0 counts as an error).
    pub fn train_error(&self, set: &TrainingSet) -> f64 {
        let wrong = self
            .outputs
            .iter()
            .zip(set.examples())
            .filter(|(n, e)| n.as_f64() * e.label.sign() as f64 <= 0.0)
            .count();
        wrong as f64 / set.len() as f64
    }
}

/// Pooled response of `f` over `patterns`: the maximum ReLU value and the
/// position of its first occurrence (`NO_ROUTE` when the maximum is 0, where
/// the ReLU derivative is 0). The flag reports a tie between two positions.
#[inline]
fn pool<T: Scalar>(f: [T; 2], patterns: &[Pattern]) -> (T, u8, bool) {
    let mut best = T::zero();
    let mut route = NO_ROUTE;
    let mut tie = false;
    for (i, &p) in patterns.iter().enumerate() {
        let v = dot_pattern(f, p);
        if v > best {
            best = v;
            route = i as u8;
            tie = false;
        } else if route != NO_ROUTE && v == best {
            tie = true;
        }
    }
    (best, route, tie)
}

/// Reusable buffers for [`evaluate`].
struct Workspace {
    /// `routes[e * 2k + j]` for `w` filters, `routes[e * 2k + k + j]` for `u`.
    routes: Vec<u8>,
    /// Integer sums of routed pattern coordinates: `[w_pos, w_neg, u_pos, u_neg]` per filter.
    acc: Vec<[[i64; 2]; 4]>,
}

impl Workspace {
    fn new() -> Self {
        Workspace {
            routes: Vec::new(),
            acc: Vec::new(),
        }
    }
}

fn evaluate_with<T: Scalar>(ws: &mut Workspace, w: &WeightMatrix<T>, set: &TrainingSet, gamma: f64) -> Evaluation<T> {
    let k = w.k();
    let m = set.len();
    ws.routes.clear();
    ws.routes.resize(m * 2 * k, NO_ROUTE);
    let mut outputs = Vec::with_capacity(m);
    let mut tie = false;

    for (e, ex) in set.examples().iter().enumerate() {
        let base = e * 2 * k;
        let mut pos = T::zero();
        for (j, f) in w.w.iter().enumerate() {
            let (v, r, t) = pool(*f, &ex.patterns);
            pos += v;
            ws.routes[base + j] = r;
            tie |= t;
        }
        let mut neg = T::zero();
        for (j, f) in w.u.iter().enumerate() {
            let (v, r, t) = pool(*f, &ex.patterns);
            neg += v;
            ws.routes[base + k + j] = r;
            tie |= t;
        }
        outputs.push(pos - neg);
    }

    let (n_pos, n_neg) = match set.arch() {
        Arch::Xor => (1, 1),
        Arch::Xord => (set.count(Label::Positive).max(1), set.count(Label::Negative).max(1)),
    };
    let mut violating = Vec::with_capacity(m);
    let mut pos_sum = T::zero();
    let mut neg_sum = T::zero();
    for (ex, &n) in set.examples().iter().zip(&outputs) {
        let margin = T::of(set.margin(ex.label, gamma));
        let h = margin - ex.label.as_scalar::<T>() * n;
        let v = h > T::zero();
        violating.push(v);
        if v {
            match ex.label {
                Label::Positive => pos_sum += h,
                Label::Negative => neg_sum += h,
            }
        }
    }
    let loss = pos_sum / T::of(n_pos as f64) + neg_sum / T::of(n_neg as f64);

    ws.acc.clear();
    ws.acc.resize(k, [[0; 2]; 4]);
    for (e, ex) in set.examples().iter().enumerate() {
        if !violating[e] {
            continue;
        }
        let base = e * 2 * k;
        let side = match ex.label {
            Label::Positive => 0,
            Label::Negative => 1,
        };
        for j in 0..k {
            for (g, offset) in [(0, 0), (2, k)] {
                let r = ws.routes[base + offset + j];
                if r != NO_ROUTE {
                    let [a, b] = ex.patterns[r as usize].coords();
                    let slot = &mut ws.acc[j][g + side];
                    slot[0] += a as i64;
                    slot[1] += b as i64;
                }
            }
        }
    }
    let (dp, dn) = (T::of(n_pos as f64), T::of(n_neg as f64));
    let combine = |pos: [i64; 2], neg: [i64; 2], sign: T| -> [T; 2] {
        let c = |i: usize| sign * (T::of(neg[i] as f64) / dn - T::of(pos[i] as f64) / dp);
        [c(0), c(1)]
    };
    let grad = WeightMatrix {
        w: ws.acc.iter().map(|a| combine(a[0], a[1], T::one())).collect(),
        u: ws.acc.iter().map(|a| combine(a[2], a[3], -T::one())).collect(),
    };

    Evaluation {
        outputs,
        loss,
        violating,
        tie,
        grad,
    }
}

fn check_gamma(set: &TrainingSet, gamma: f64) -> Result<()> {
    if set.arch() == Arch::Xor && gamma != 1.0 {
        return Err(invalid("the XOR loss uses margin 1; gamma must be 1"));
    }
    if !(gamma >= 1.0) {
        return Err(invalid(format!("gamma must be >= 1, got {gamma}")));
    }
    Ok(())
}

/// Loss, outputs and subgradient of the hinge objective.
///
/// The subgradient uses `σ'(0) = 0`, routes each pooled maximum to its first
/// argmax position, and counts an example iff `y·N(x) < margin` strictly.
pub fn evaluate<T: Scalar>(w: &WeightMatrix<T>, set: &TrainingSet, gamma: f64) -> Result<Evaluation<T>> {
    check_gamma(set, gamma)?;
    if set.is_empty() {
        return Err(invalid("empty training set"));
    }
    Ok(evaluate_with(&mut Workspace::new(), w, set, gamma))
}

/// Hinge loss: the unnormalized sum for XOR, per-sign means for XORD.
pub fn hinge_loss<T: Scalar>(w: &WeightMatrix<T>, set: &TrainingSet, gamma: f64) -> Result<T> {
    evaluate(w, set, gamma).map(|e| e.loss)
}

/// Subgradient of [`hinge_loss`].
pub fn subgradient<T: Scalar>(w: &WeightMatrix<T>, set: &TrainingSet, gamma: f64) -> Result<WeightMatrix<T>> {
    evaluate(w, set, gamma).map(|e| e.grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndpointKind {
    /// Loss exactly 0.
    GlobalMin,
    /// Subgradient exactly 0 with positive loss.
    LocalMin,
    /// Patience exhausted without improvement.
    Plateau,
    BudgetExhausted,
}

/// How and when training stopped. `iteration` counts updates applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub kind: EndpointKind,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceLevel {
    /// Final state only.
    Off,
    /// Per-iteration scalars, outputs and indicators.
    Summary,
    /// Summary plus a full weight snapshot per iteration.
    Full,
}

/// One row of a [`TrainTrace`].
#[derive(Clone, Debug, PartialEq)]
pub struct IterRecord<T> {
    pub t: usize,
    pub loss: T,
    pub outputs: Vec<T>,
    pub violating: Vec<bool>,
    /// Per example, the number of earlier iterations `s < t` at which it
    /// violated its margin.
    pub counters: Vec<u64>,
    pub tie: bool,
    pub snapshot: Option<WeightMatrix<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace<T> {
    pub level: TraceLevel,
    pub records: Vec<IterRecord<T>>,
    /// Whether any evaluated iterate had a pooling tie.
    pub any_tie: bool,
    /// Evaluation of the returned weights.
    pub last: Evaluation<T>,
    /// Violation counters at the returned weights.
    pub last_counters: Vec<u64>,
}

/// What a monitor sees at iteration `t`, before the update.
pub struct StepView<'a, T> {
    pub t: usize,
    pub weights: &'a WeightMatrix<T>,
    /// Weights after this step; `None` at the final iteration.
    pub next: Option<&'a WeightMatrix<T>>,
    pub eval: &'a Evaluation<T>,
    pub counters: &'a [u64],
    pub set: &'a TrainingSet,
    pub hp: &'a HyperParams,
    pub eta: T,
}

/// Per-iteration observer; monitors record what they need and are inspected
/// after training.
pub trait Monitor<T> {
    fn observe(&mut self, view: &StepView<'_, T>);
}

impl<T, F: FnMut(&StepView<'_, T>)> Monitor<T> for F {
    fn observe(&mut self, view: &StepView<'_, T>) {
        self(view)
    }
}

/// Full-batch gradient descent `W ← W − η·∂ℓ/∂W` with `η = c_eta / k`.
pub fn train<T: Scalar>(
    w0: &WeightMatrix<T>,
    set: &TrainingSet,
    hp: &HyperParams,
    level: TraceLevel,
    monitors: &mut [&mut dyn Monitor<T>],
) -> Result<(WeightMatrix<T>, TrainTrace<T>, Endpoint)> {
    hp.validate()?;
    check_gamma(set, hp.gamma)?;
    if set.is_empty() {
        return Err(invalid("empty training set"));
    }
    if w0.k() != hp.k {
        return Err(invalid(format!("weights have k = {}, hyperparameters say {}", w0.k(), hp.k)));
    }
    let eta = T::of(hp.eta());
    let mut ws = Workspace::new();
    let mut w = w0.clone();
    let mut counters = vec![0u64; set.len()];
    let mut records = Vec::new();
    let mut any_tie = false;
    let mut best_loss = T::infinity();
    let mut stale = 0usize;
    let mut first_min: Option<Endpoint> = None;

    let mut t = 0usize;
    loop {
        let ev = evaluate_with(&mut ws, &w, set, hp.gamma);
        if !ev.loss.is_finite() || !w.is_finite() {
            return Err(Error::NumericalFailure {
                iteration: t,
                detail: format!("loss = {}", ev.loss),
            });
        }
        any_tie |= ev.tie;
        if level != TraceLevel::Off {
            records.push(IterRecord {
                t,
                loss: ev.loss,
                outputs: ev.outputs.clone(),
                violating: ev.violating.clone(),
                counters: counters.clone(),
                tie: ev.tie,
                snapshot: (level == TraceLevel::Full).then(|| w.clone()),
            });
        }

        let minimum = if ev.loss == T::zero() {
            Some(EndpointKind::GlobalMin)
        } else if ev.grad_is_zero() {
            Some(EndpointKind::LocalMin)
        } else {
            None
        };
        if first_min.is_none() {
            first_min = minimum.map(|kind| Endpoint { kind, iteration: t });
        }
        if ev.loss < best_loss {
            best_loss = ev.loss;
            stale = 0;
        } else {
            stale += 1;
        }
        let stop = match hp.stop_rule {
            StopRule::Budget => (t == hp.max_iters).then(|| {
                first_min.unwrap_or(Endpoint {
                    kind: EndpointKind::BudgetExhausted,
                    iteration: t,
                })
            }),
            StopRule::ZeroLoss | StopRule::Patience(_) => {
                if let Some(kind) = minimum {
                    Some(Endpoint { kind, iteration: t })
                } else if matches!(hp.stop_rule, StopRule::Patience(n) if stale >= n) {
                    Some(Endpoint {
                        kind: EndpointKind::Plateau,
                        iteration: t,
                    })
                } else if t == hp.max_iters {
                    Some(Endpoint {
                        kind: EndpointKind::BudgetExhausted,
                        iteration: t,
                    })
                } else {
                    None
                }
            }
        };

        let next = stop.is_none().then(|| step(&w, &ev.grad, eta));
        for m in monitors.iter_mut() {
            m.observe(&StepView {
                t,
                weights: &w,
                next: next.as_ref(),
                eval: &ev,
                counters: &counters,
                set,
                hp,
                eta,
            });
        }
        match (stop, next) {
            (Some(endpoint), _) => {
                let trace = TrainTrace {
                    level,
                    records,
                    any_tie,
                    last: ev,
                    last_counters: counters,
                };
                return Ok((w, trace, endpoint));
            }
            (None, Some(n)) => {
                for (c, &v) in counters.iter_mut().zip(&ev.violating) {
                    *c += v as u64;
                }
                w = n;
                t += 1;
            }
            (None, None) => unreachable!(),
        }
    }
}

/// `W − η·G`.
pub(crate) fn step<T: Scalar>(w: &WeightMatrix<T>, g: &WeightMatrix<T>, eta: T) -> WeightMatrix<T> {
    let upd = |a: &[[T; 2]], b: &[[T; 2]]| a.iter().zip(b).map(|(x, d)| [x[0] - eta * d[0], x[1] - eta * d[1]]).collect();
    WeightMatrix {
        w: upd(&w.w, &g.w),
        u: upd(&w.u, &g.u),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gd::{conv_forward, xor_forward, xord_forward};
    use crate::patterns::{BinaryInput, Pattern::*};

    fn xor_set() -> TrainingSet {
        TrainingSet::xor(&[
            (P1, Label::Positive),
            (P4, Label::Negative),
            (P3, Label::Positive),
            (P2, Label::Negative),
        ])
        .unwrap()
    }

    fn diverse_pair() -> TrainingSet {
        TrainingSet::xord_labeled(&[
            BinaryInput::from_indices(&[1, 2, 3, 4]).unwrap(),
            BinaryInput::from_indices(&[2, 4, 2, 2]).unwrap(),
        ])
        .unwrap()
    }

    fn hp(k: usize) -> HyperParams {
        HyperParams {
            k,
            c_eta: 0.1,
            sigma_g: 0.0,
            gamma: 1.0,
            max_iters: 100,
            stop_rule: StopRule::ZeroLoss,
        }
    }

    #[test]
    fn zero_weights_on_xor_give_loss_four() {
        let w = WeightMatrix::<f64>::zeros(3);
        assert_eq!(hinge_loss(&w, &xor_set(), 1.0).unwrap(), 4.0);
        assert!(hinge_loss(&w, &xor_set(), 2.0).is_err());
    }

    #[test]
    fn outputs_match_reference_forward() {
        let w = WeightMatrix::<f64>::from_f64(&[[0.3, -0.2], [-0.5, 0.1]], &[[0.2, 0.9], [0.0, -0.4]]).unwrap();
        let ev = evaluate(&w, &xor_set(), 1.0).unwrap();
        for (n, p) in ev.outputs.iter().zip([P1, P4, P3, P2]) {
            assert_eq!(*n, xor_forward(&w, p.vector()));
        }
        let set = diverse_pair();
        let ev = evaluate(&w, &set, 3.0).unwrap();
        for (n, x) in ev.outputs.iter().zip(set.inputs()) {
            assert_eq!(*n, xord_forward(&w, x));
            assert_eq!(*n, conv_forward(&w, &x.positions::<f64>()));
        }
    }

    #[test]
    fn satisfied_points_contribute_nothing() {
        let w = WeightMatrix::<f64>::from_patterns(&[(5.0, P1), (5.0, P3)], &[(2.0, P2), (2.0, P4)]).unwrap();
        let ev = evaluate(&w, &diverse_pair(), 8.0).unwrap();
        assert_eq!(ev.loss, 0.0);
        assert!(ev.grad_is_zero());
    }

    #[test]
    fn already_optimal_start_stops_at_zero() {
        let w = WeightMatrix::<f64>::from_patterns(&[(5.0, P1), (5.0, P3)], &[(2.0, P2), (2.0, P4)]).unwrap();
        let (w1, trace, end) = train(&w, &diverse_pair(), &hp(2), TraceLevel::Summary, &mut []).unwrap();
        assert_eq!(
            end,
            Endpoint {
                kind: EndpointKind::GlobalMin,
                iteration: 0
            }
        );
        assert_eq!(w1, w);
        assert_eq!(trace.records.len(), 1);
    }

    #[test]
    fn zero_start_on_xor_is_a_local_min() {
        // All ReLUs sit at the kink, so the subgradient convention gives 0.
        let (_, _, end) = train(&WeightMatrix::<f64>::zeros(2), &xor_set(), &hp(2), TraceLevel::Off, &mut []).unwrap();
        assert_eq!(end.kind, EndpointKind::LocalMin);
    }

    #[test]
    fn ties_route_to_first_position() {
        // f·p1 = f·p2 when f = (1, 0).
        let w = WeightMatrix::<f64>::from_f64(&[[1.0, 0.0]], &[[0.0, 0.0]]).unwrap();
        let set = TrainingSet::xord(&[(BinaryInput::from_indices(&[2, 1]).unwrap(), Label::Positive)]).unwrap();
        let ev = evaluate(&w, &set, 2.0).unwrap();
        assert!(ev.tie);
        // Gradient −p2 (first occurrence), not −p1.
        assert_eq!(ev.grad.w[0], [-1.0, 1.0]);
    }

    #[test]
    fn patience_and_budget_rules() {
        let set = xor_set();
        let w = WeightMatrix::<f64>::from_f64(&[[0.01, 0.02]], &[[-0.03, 0.01]]).unwrap();
        let mut h = hp(1);
        h.max_iters = 3;
        let (_, trace, end) = train(&w, &set, &h, TraceLevel::Summary, &mut []).unwrap();
        assert_eq!(end.kind, EndpointKind::BudgetExhausted);
        assert_eq!(end.iteration, 3);
        assert_eq!(trace.records.iter().map(|r| r.t).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        // With one filter per sign the XOR loss cannot reach zero; it plateaus.
        h.max_iters = 10_000;
        h.stop_rule = StopRule::Patience(5);
        let (_, _, end) = train(&w, &set, &h, TraceLevel::Off, &mut []).unwrap();
        assert!(matches!(end.kind, EndpointKind::Plateau | EndpointKind::LocalMin));
    }

    #[test]
    fn counters_count_strictly_earlier_violations() {
        let set = xor_set();
        let w = WeightMatrix::<f64>::from_f64(&[[0.01, 0.02], [0.0, -0.01]], &[[-0.03, 0.01], [0.02, 0.0]]).unwrap();
        let mut h = hp(2);
        h.max_iters = 20;
        let (_, trace, _) = train(&w, &set, &h, TraceLevel::Summary, &mut []).unwrap();
        for pair in trace.records.windows(2) {
            for e in 0..set.len() {
                assert_eq!(pair[1].counters[e], pair[0].counters[e] + pair[0].violating[e] as u64);
            }
        }
        assert!(trace.records[0].counters.iter().all(|&c| c == 0));
    }

    #[test]
    fn monitors_see_every_iteration() {
        let set = diverse_pair();
        let w = WeightMatrix::<f64>::from_f64(&[[0.01, 0.02], [0.0, -0.01]], &[[-0.03, 0.01], [0.02, 0.0]]).unwrap();
        let mut seen = Vec::new();
        let mut mon = |v: &StepView<'_, f64>| seen.push((v.t, v.next.is_some()));
        let (_, trace, end) = train(&w, &set, &hp(2), TraceLevel::Summary, &mut [&mut mon]).unwrap();
        assert_eq!(seen.len(), trace.records.len());
        assert_eq!(seen.last().unwrap(), &(end.iteration, false));
    }
}
