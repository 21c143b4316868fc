//! Two-layer XOR network and three-layer XORD convolutional network trained
//! by full-batch gradient descent on the first layer only.
//!
//! Both networks share the same weights: `k` filters `w` whose ReLU
//! responses enter the output with sign `+1` and `k` filters `u` entering
//! with sign `−1`. The XOR network applies them to one 2-vector; the XORD
//! network applies them to each slot of a [`BinaryInput`] and max-pools.

mod io;
pub(crate) mod train;

pub use io::{read_weights, write_filter_csv, write_trace_csv, write_weights, TRACE_CSV_COLUMNS};
pub use train::{
    evaluate, hinge_loss, subgradient, train, Endpoint, EndpointKind, Evaluation, IterRecord, Monitor, StepView, TraceLevel, TrainTrace,
};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::patterns::{BinaryInput, Label, Pattern};
use crate::scalar::{dot2, Scalar};

/// The `2k` first-layer filters.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix<T> {
    pub w: Vec<[T; 2]>,
    pub u: Vec<[T; 2]>,
}

/// Which sign group a filter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    W,
    U,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn zeros(k: usize) -> Self {
        WeightMatrix {
            w: vec![[T::zero(); 2]; k],
            u: vec![[T::zero(); 2]; k],
        }
    }

    pub fn from_filters(w: Vec<[T; 2]>, u: Vec<[T; 2]>) -> Result<Self> {
        if w.len() != u.len() || w.is_empty() {
            return Err(invalid(format!(
                "need k >= 1 filters in each group, got {} w and {} u",
                w.len(),
                u.len()
            )));
        }
        let m = WeightMatrix { w, u };
        if !m.is_finite() {
            return Err(invalid("weights must be finite"));
        }
        Ok(m)
    }

    /// Convenience constructor from `f64` coordinates.
    pub fn from_f64(w: &[[f64; 2]], u: &[[f64; 2]]) -> Result<Self> {
        let conv = |v: &[[f64; 2]]| v.iter().map(|&[a, b]| [T::of(a), T::of(b)]).collect();
        Self::from_filters(conv(w), conv(u))
    }

    /// Filters that are integer multiples of patterns, e.g. `w = (3p1, 3p3)`.
    pub fn from_patterns(w: &[(f64, Pattern)], u: &[(f64, Pattern)]) -> Result<Self> {
        let conv = |v: &[(f64, Pattern)]| {
            v.iter()
                .map(|&(s, p)| {
                    let [a, b] = p.coords();
                    [T::of(s * a as f64), T::of(s * b as f64)]
                })
                .collect()
        };
        Self::from_filters(conv(w), conv(u))
    }

    pub fn k(&self) -> usize {
        self.w.len()
    }

    pub fn group(&self, g: Group) -> &[[T; 2]] {
        match g {
            Group::W => &self.w,
            Group::U => &self.u,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(&self.u).all(|f| f[0].is_finite() && f[1].is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.w.iter().chain(&self.u).all(|f| f[0] == T::zero() && f[1] == T::zero())
    }

    /// Coordinates in the order `w₁, …, w_k, u₁, …, u_k`, two per filter.
    pub fn to_flat(&self) -> Vec<T> {
        self.w.iter().chain(&self.u).flat_map(|f| *f).collect()
    }

    pub fn from_flat(k: usize, flat: &[T]) -> Result<Self> {
        if flat.len() != 4 * k {
            return Err(invalid(format!("expected {} coordinates, got {}", 4 * k, flat.len())));
        }
        let filters: Vec<[T; 2]> = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        Self::from_filters(filters[..k].to_vec(), filters[k..].to_vec())
    }

    pub fn cast<S: Scalar>(&self) -> WeightMatrix<S> {
        let conv = |v: &[[T; 2]]| v.iter().map(|f| [S::of(f[0].as_f64()), S::of(f[1].as_f64())]).collect();
        WeightMatrix {
            w: conv(&self.w),
            u: conv(&self.u),
        }
    }
}

/// Filters with i.i.d. `N(0, sigma_g²)` coordinates, `w` filters first.
pub fn init_gaussian<T: Scalar, R: Rng + ?Sized>(k: usize, sigma_g: f64, rng: &mut R) -> Result<WeightMatrix<T>> {
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if !(sigma_g >= 0.0) || !sigma_g.is_finite() {
        return Err(invalid(format!("sigma_g must be finite and >= 0, got {sigma_g}")));
    }
    if sigma_g == 0.0 {
        return Ok(WeightMatrix::zeros(k));
    }
    let mut draw = || {
        let z: f64 = StandardNormal.sample(rng);
        T::of(sigma_g * z)
    };
    let w = (0..k).map(|_| [draw(), draw()]).collect();
    let u = (0..k).map(|_| [draw(), draw()]).collect();
    Ok(WeightMatrix { w, u })
}

/// `Σᵢ [σ(wⁱ·x) − σ(uⁱ·x)]`.
pub fn xor_forward<T: Scalar>(w: &WeightMatrix<T>, x: [T; 2]) -> T {
    let pos: T = w.w.iter().map(|f| dot2(*f, x).relu()).sum();
    let neg: T = w.u.iter().map(|f| dot2(*f, x).relu()).sum();
    pos - neg
}

/// `Σᵢ [maxⱼ σ(wⁱ·xⱼ) − maxⱼ σ(uⁱ·xⱼ)]` over arbitrary real slot vectors.
pub fn conv_forward<T: Scalar>(w: &WeightMatrix<T>, positions: &[[T; 2]]) -> T {
    let pooled = |f: &[T; 2]| {
        positions
            .iter()
            .map(|x| dot2(*f, *x).relu())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    };
    let pos: T = w.w.iter().map(pooled).sum();
    let neg: T = w.u.iter().map(pooled).sum();
    pos - neg
}

/// XORD network output on a binary input.
pub fn xord_forward<T: Scalar>(w: &WeightMatrix<T>, x: &BinaryInput) -> T {
    conv_forward(w, &x.positions::<T>())
}

/// `f·p` for a pattern `p`, computed with additions only. Bitwise equal to
/// `dot2(f, p.vector())`.
#[inline]
pub fn dot_pattern<T: Scalar>(f: [T; 2], p: Pattern) -> T {
    match p {
        Pattern::P1 => f[0] + f[1],
        Pattern::P2 => f[0] - f[1],
        Pattern::P3 => -f[0] - f[1],
        Pattern::P4 => -f[0] + f[1],
    }
}

/// Network architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Unnormalized hinge sum with margin 1; every example is one 2-vector.
    Xor,
    /// Per-sign mean hinge loss with margins `γ` (positive) and `1` (negative).
    Xord,
}

/// One training example: its distinct patterns in order of first occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub patterns: Vec<Pattern>,
    pub label: Label,
}

/// A labeled training set for one architecture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingSet {
    arch: Arch,
    examples: Vec<Example>,
    inputs: Vec<BinaryInput>,
}

impl TrainingSet {
    /// XOR training set from single-pattern points.
    pub fn xor(points: &[(Pattern, Label)]) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid("empty training set"));
        }
        let inputs = points.iter().map(|(p, _)| BinaryInput::new(vec![*p])).collect::<Result<Vec<_>>>()?;
        let examples = points.iter().map(|&(p, label)| Example { patterns: vec![p], label }).collect();
        Ok(TrainingSet {
            arch: Arch::Xor,
            examples,
            inputs,
        })
    }

    /// XORD training set. Labels are taken as given.
    pub fn xord(data: &[(BinaryInput, Label)]) -> Result<Self> {
        if data.is_empty() {
            return Err(invalid("empty training set"));
        }
        let examples = data
            .iter()
            .map(|(x, label)| Example {
                patterns: x.distinct_in_order(),
                label: *label,
            })
            .collect();
        Ok(TrainingSet {
            arch: Arch::Xord,
            examples,
            inputs: data.iter().map(|(x, _)| x.clone()).collect(),
        })
    }

    /// XORD training set labeled by the ground-truth rule.
    pub fn xord_labeled(inputs: &[BinaryInput]) -> Result<Self> {
        let data: Vec<_> = inputs.iter().map(|x| (x.clone(), x.label())).collect();
        Self::xord(&data)
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn inputs(&self) -> &[BinaryInput] {
        &self.inputs
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.examples.iter().filter(|e| e.label == label).count()
    }

    /// Margin required of `label`.
    pub fn margin(&self, label: Label, gamma: f64) -> f64 {
        match (self.arch, label) {
            (Arch::Xord, Label::Positive) => gamma,
            _ => 1.0,
        }
    }
}

/// When to stop training short of the iteration budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "iterations")]
pub enum StopRule {
    /// Stop at the first global or local minimum.
    ZeroLoss,
    /// As `ZeroLoss`, and also after this many consecutive iterations without
    /// a strict improvement of the best loss seen.
    Patience(usize),
    /// Always run the full budget.
    Budget,
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub k: usize,
    /// Learning rate is `c_eta / k`.
    pub c_eta: f64,
    pub sigma_g: f64,
    pub gamma: f64,
    pub max_iters: usize,
    pub stop_rule: StopRule,
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be >= 1"));
        }
        if !(self.c_eta > 0.0) || !self.c_eta.is_finite() {
            return Err(invalid(format!("c_eta must be > 0, got {}", self.c_eta)));
        }
        if !(self.sigma_g >= 0.0) || !self.sigma_g.is_finite() {
            return Err(invalid(format!("sigma_g must be >= 0, got {}", self.sigma_g)));
        }
        if !(self.gamma >= 1.0) || !self.gamma.is_finite() {
            return Err(invalid(format!("gamma must be >= 1, got {}", self.gamma)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters must be >= 1"));
        }
        if let StopRule::Patience(0) = self.stop_rule {
            return Err(invalid("patience must be >= 1"));
        }
        Ok(())
    }

    pub fn eta(&self) -> f64 {
        self.c_eta / self.k as f64
    }

    /// `c_eta / (16 k^{3/2})`, the largest initialization scale the
    /// convergence guarantees allow.
    pub fn sigma_bound(k: usize, c_eta: f64) -> f64 {
        c_eta / (16.0 * (k as f64).powf(1.5))
    }
}
