//! Pattern algebra for the XOR-detection problem.
//!
//! An input in `{±1}^{2d}` is read as `d` consecutive two-coordinate slots,
//! each holding one of four patterns:
//!
//! | pattern | coords    | sign     |
//! |---------|-----------|----------|
//! | `P1`    | `( 1,  1)` | positive |
//! | `P2`    | `( 1, -1)` | negative |
//! | `P3`    | `(-1, -1)` | positive |
//! | `P4`    | `(-1,  1)` | negative |
//!
//! The ground-truth rule labels an input `+1` iff some slot holds a positive
//! pattern. Both the rule and the max-pooling network only see the *set* of
//! patterns present, so the input space collapses to 15 classes (the
//! non-empty subsets of `{1,2,3,4}`); most class-level quantities here are
//! computed exactly on those classes.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// One of the four two-dimensional binary patterns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    P1,
    P2,
    P3,
    P4,
}

impl Pattern {
    pub const ALL: [Pattern; 4] = [Pattern::P1, Pattern::P2, Pattern::P3, Pattern::P4];

    /// Pattern from its 1-based index.
    pub fn from_index(index: u8) -> Result<Self> {
        match index {
            1 => Ok(Pattern::P1),
            2 => Ok(Pattern::P2),
            3 => Ok(Pattern::P3),
            4 => Ok(Pattern::P4),
            other => Err(invalid(format!("pattern index {other} not in 1..=4"))),
        }
    }

    /// Pattern with the given coordinates.
    pub fn from_coords(coords: [i8; 2]) -> Result<Self> {
        match coords {
            [1, 1] => Ok(Pattern::P1),
            [1, -1] => Ok(Pattern::P2),
            [-1, -1] => Ok(Pattern::P3),
            [-1, 1] => Ok(Pattern::P4),
            other => Err(invalid(format!("{other:?} is not a ±1 pattern"))),
        }
    }

    pub fn index(self) -> u8 {
        self as u8 + 1
    }

    pub fn coords(self) -> [i8; 2] {
        match self {
            Pattern::P1 => [1, 1],
            Pattern::P2 => [1, -1],
            Pattern::P3 => [-1, -1],
            Pattern::P4 => [-1, 1],
        }
    }

    pub fn vector<T: Scalar>(self) -> [T; 2] {
        let [a, b] = self.coords();
        [T::of(a as f64), T::of(b as f64)]
    }

    pub fn negated(self) -> Self {
        match self {
            Pattern::P1 => Pattern::P3,
            Pattern::P2 => Pattern::P4,
            Pattern::P3 => Pattern::P1,
            Pattern::P4 => Pattern::P2,
        }
    }

    /// `P1` and `P3` are the positive patterns.
    pub fn is_positive(self) -> bool {
        matches!(self, Pattern::P1 | Pattern::P3)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.index())
    }
}

/// Coordinates of pattern `index`.
pub fn pattern_vec(index: u8) -> Result<[i8; 2]> {
    Pattern::from_index(index).map(Pattern::coords)
}

/// Binary label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative,
    Positive,
}

impl Label {
    pub fn from_sign(sign: i8) -> Result<Self> {
        match sign {
            1 => Ok(Label::Positive),
            -1 => Ok(Label::Negative),
            other => Err(invalid(format!("label must be ±1, got {other}"))),
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Label::Positive => 1,
            Label::Negative => -1,
        }
    }

    pub fn as_scalar<T: Scalar>(self) -> T {
        T::of(self.sign() as f64)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:+}", self.sign())
    }
}

/// A non-empty subset of the four patterns, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatternSet(u8);

impl PatternSet {
    /// `{1,2,3,4}`: the pattern set of a diverse positive point.
    pub const DIVERSE_POSITIVE: PatternSet = PatternSet(0b1111);
    /// `{2,4}`: the pattern set of a diverse negative point.
    pub const DIVERSE_NEGATIVE: PatternSet = PatternSet(0b1010);

    pub fn new(members: &[Pattern]) -> Result<Self> {
        let mask = members.iter().fold(0u8, |m, p| m | p.bit());
        Self::from_mask(mask)
    }

    pub fn from_indices(indices: &[u8]) -> Result<Self> {
        let members = indices.iter().map(|&i| Pattern::from_index(i)).collect::<Result<Vec<_>>>()?;
        Self::new(&members)
    }

    pub fn from_mask(mask: u8) -> Result<Self> {
        if mask == 0 || mask > 0b1111 {
            return Err(invalid(format!("pattern-set mask {mask:#06b} out of range")));
        }
        Ok(PatternSet(mask))
    }

    /// All 15 pattern sets, in ascending mask order.
    pub fn all() -> impl Iterator<Item = PatternSet> {
        (1u8..=15).map(PatternSet)
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn contains(self, p: Pattern) -> bool {
        self.0 & p.bit() != 0
    }

    /// Members in ascending index order.
    pub fn members(self) -> Vec<Pattern> {
        Pattern::ALL.into_iter().filter(|&p| self.contains(p)).collect()
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        false
    }

    /// `+1` iff a positive pattern is present.
    pub fn label(self) -> Label {
        if self.0 & (Pattern::P1.bit() | Pattern::P3.bit()) != 0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    /// A class is realizable with `d` slots iff it has at most `d` members.
    pub fn feasible(self, d: usize) -> bool {
        self.len() <= d
    }

    pub fn is_diverse(self) -> bool {
        self == Self::DIVERSE_POSITIVE || self == Self::DIVERSE_NEGATIVE
    }

    /// Sorted member list, e.g. `"2,4"`. Used as the configuration key.
    pub fn key(self) -> String {
        self.members().iter().map(|p| p.index().to_string()).collect::<Vec<_>>().join(",")
    }
}

impl fmt::Display for PatternSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.key())
    }
}

impl fmt::Debug for PatternSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PatternSet{self}")
    }
}

impl FromStr for PatternSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_start_matches('{').trim_end_matches('}');
        let indices = trimmed
            .split(',')
            .map(|t| t.trim().parse::<u8>().map_err(|_| invalid(format!("bad pattern-set key {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::from_indices(&indices)
    }
}

impl Serialize for PatternSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.key())
    }
}

impl<'de> Deserialize<'de> for PatternSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four critical classes `{2}`, `{4}`, `{1,2,4}`, `{2,3,4}`: a small network
/// that fails to recover the rule misclassifies one of them entirely.
pub fn critical_classes() -> [PatternSet; 4] {
    [
        PatternSet(Pattern::P2.bit()),
        PatternSet(Pattern::P4.bit()),
        PatternSet(Pattern::P1.bit() | Pattern::P2.bit() | Pattern::P4.bit()),
        PatternSet(Pattern::P2.bit() | Pattern::P3.bit() | Pattern::P4.bit()),
    ]
}

/// A point of `{±1}^{2d}` viewed as `d` patterns.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryInput {
    patterns: Vec<Pattern>,
}

impl BinaryInput {
    pub fn new(patterns: Vec<Pattern>) -> Result<Self> {
        if patterns.is_empty() {
            return Err(invalid("an input needs d >= 1 patterns"));
        }
        Ok(BinaryInput { patterns })
    }

    /// Input from a flat `±1` vector of even length.
    pub fn from_flat(coords: &[i8]) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(invalid(format!("flat input length {} is not a positive even number", coords.len())));
        }
        let patterns = coords
            .chunks_exact(2)
            .map(|c| Pattern::from_coords([c[0], c[1]]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(patterns)
    }

    pub fn from_indices(indices: &[u8]) -> Result<Self> {
        let patterns = indices.iter().map(|&i| Pattern::from_index(i)).collect::<Result<Vec<_>>>()?;
        Self::new(patterns)
    }

    pub fn d(&self) -> usize {
        self.patterns.len()
    }

    pub fn patterns(&self) -> &[Pattern] {
        &self.patterns
    }

    pub fn flatten(&self) -> Vec<i8> {
        self.patterns.iter().flat_map(|p| p.coords()).collect()
    }

    /// The `d` slot vectors, in order.
    pub fn positions<T: Scalar>(&self) -> Vec<[T; 2]> {
        self.patterns.iter().map(|p| p.vector()).collect()
    }

    /// Distinct patterns in order of first occurrence.
    ///
    /// Max-pooling over these gives the same value, and routes the gradient to
    /// the same pattern, as pooling over all `d` slots with lowest-index
    /// tie-breaking.
    pub fn distinct_in_order(&self) -> Vec<Pattern> {
        let mut seen = 0u8;
        let mut out = Vec::with_capacity(4);
        for &p in &self.patterns {
            if seen & p.bit() == 0 {
                seen |= p.bit();
                out.push(p);
            }
        }
        out
    }

    pub fn pattern_set(&self) -> PatternSet {
        PatternSet::new(&self.patterns).expect("inputs are non-empty")
    }

    pub fn label(&self) -> Label {
        self.pattern_set().label()
    }

    pub fn is_diverse(&self) -> bool {
        self.pattern_set().is_diverse()
    }

    /// Canonical member of `class` with `d` slots: members in ascending order,
    /// then the smallest member repeated. `None` if the class does not fit.
    pub fn canonical(class: PatternSet, d: usize) -> Option<Self> {
        if d == 0 || !class.feasible(d) {
            return None;
        }
        let mut patterns = class.members();
        let first = patterns[0];
        patterns.resize(d, first);
        Some(BinaryInput { patterns })
    }
}

impl fmt::Display for BinaryInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.patterns.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

pub fn label_of(x: &BinaryInput) -> Label {
    x.label()
}

pub fn pattern_set_of(x: &BinaryInput) -> PatternSet {
    x.pattern_set()
}

pub fn is_diverse(x: &BinaryInput) -> bool {
    x.is_diverse()
}

/// One row of [`enumerate_classes`].
#[derive(Clone, Debug)]
pub struct ClassInfo {
    pub set: PatternSet,
    pub feasible: bool,
    /// Canonical representative; `None` for infeasible classes.
    pub representative: Option<BinaryInput>,
}

/// All 15 pattern-set classes for inputs with `d` slots.
pub fn enumerate_classes(d: usize) -> Result<Vec<ClassInfo>> {
    if d == 0 {
        return Err(invalid("d must be >= 1"));
    }
    Ok(PatternSet::all()
        .map(|set| ClassInfo {
            set,
            feasible: set.feasible(d),
            representative: BinaryInput::canonical(set, d),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Exact counting

/// Largest `d` for which the exact `i128` counts below cannot overflow.
pub const MAX_EXACT_D: usize = 60;

fn binomial(n: u32, k: u32) -> i128 {
    (0..k).fold(1i128, |acc, i| acc * (n - i) as i128 / (i + 1) as i128)
}

/// Number of length-`d` strings over an alphabet of `s` letters that use
/// every letter (surjections), by inclusion-exclusion.
pub fn surjection_count(d: usize, s: usize) -> Result<i128> {
    if d > MAX_EXACT_D {
        return Err(invalid(format!("exact counts support d <= {MAX_EXACT_D}")));
    }
    let s = s as u32;
    let total = (0..=s)
        .map(|j| {
            let term = binomial(s, j) * (j as i128).pow(d as u32);
            if (s - j) % 2 == 0 {
                term
            } else {
                -term
            }
        })
        .sum();
    Ok(total)
}

/// Exact count of length-`d` strings whose pattern set equals `class`.
pub fn class_count(class: PatternSet, d: usize) -> Result<i128> {
    surjection_count(d, class.len())
}

/// Whether `p₊` is evaluated with the closed form as printed (normalized by
/// all `4^d` strings) or as the conditional probability given a positive
/// label (normalized by the `4^d − 2^d` positive strings).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiversityMode {
    AsPrinted,
    Conditional,
}

impl FromStr for DiversityMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as-printed" => Ok(DiversityMode::AsPrinted),
            "conditional" => Ok(DiversityMode::Conditional),
            other => Err(invalid(format!("unknown diversity mode {other:?}"))),
        }
    }
}

/// Exact diversity probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiversityProbs {
    pub p_plus: Ratio<i128>,
    pub p_minus: Ratio<i128>,
}

impl DiversityProbs {
    pub fn p_plus_f64(&self) -> f64 {
        ratio_f64(self.p_plus)
    }
    pub fn p_minus_f64(&self) -> f64 {
        ratio_f64(self.p_minus)
    }
}

pub(crate) fn ratio_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Diversity probabilities under the uniform distribution on `{±1}^{2d}`.
///
/// `AsPrinted` evaluates `p₊ = 1 − (4·3^d − 6·2^d + 4)/4^d` and
/// `p₋ = 1 − 1/2^{d−1}` literally. `Conditional` returns
/// `P(diverse | positive)` and `P(diverse | negative)`. The two agree on `p₋`
/// and differ on `p₊` by the factor `4^d / (4^d − 2^d)`.
pub fn uniform_diversity_probs(d: usize, mode: DiversityMode) -> Result<DiversityProbs> {
    if d == 0 {
        return Err(invalid("d must be >= 1"));
    }
    if d > MAX_EXACT_D {
        return Err(invalid(format!("exact probabilities support d <= {MAX_EXACT_D}")));
    }
    let e = d as u32;
    let four = 4i128.pow(e);
    let three = 3i128.pow(e);
    let two = 2i128.pow(e);
    let p_minus = Ratio::new(1, 1) - Ratio::new(1, 2i128.pow(e - 1));
    let p_plus = match mode {
        DiversityMode::AsPrinted => Ratio::new(1, 1) - Ratio::new(4 * three - 6 * two + 4, four),
        DiversityMode::Conditional => {
            let diverse = four - 4 * three + 6 * two - 4;
            Ratio::new(diverse, four - two)
        }
    };
    Ok(DiversityProbs { p_plus, p_minus })
}

// ---------------------------------------------------------------------------
// Distributions

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributionMode {
    /// Uniform over `{±1}^{2d}` within each sign.
    Uniform,
    /// Explicit class weights.
    ClassWeighted,
}

/// A distribution over labeled inputs, specified at the class level.
///
/// A draw picks the sign with probability `prob_positive`, then a class from
/// that sign's weight map, then a uniformly random arrangement of `d`
/// patterns whose pattern set is exactly that class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionFile", into = "DistributionFile")]
pub struct DistributionSpec {
    pub d: usize,
    pub prob_positive: f64,
    pub mode: DistributionMode,
    pub positive_class_weights: BTreeMap<PatternSet, f64>,
    pub negative_class_weights: BTreeMap<PatternSet, f64>,
}

const WEIGHT_TOL: f64 = 1e-12;

impl DistributionSpec {
    /// Uniform inputs with a positive label with probability 1/2.
    pub fn uniform(d: usize) -> Result<Self> {
        Self::uniform_with_prior(d, 0.5)
    }

    pub fn uniform_with_prior(d: usize, prob_positive: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d must be >= 1"));
        }
        let mut pos = BTreeMap::new();
        let mut neg = BTreeMap::new();
        let neg_total = 2i128.pow(d as u32);
        let pos_total = 4i128.pow(d as u32) - neg_total;
        for set in PatternSet::all() {
            let count = class_count(set, d)?;
            match set.label() {
                Label::Positive => pos.insert(set, count as f64 / pos_total as f64),
                Label::Negative => neg.insert(set, count as f64 / neg_total as f64),
            };
        }
        let spec = DistributionSpec {
            d,
            prob_positive,
            mode: DistributionMode::Uniform,
            positive_class_weights: pos,
            negative_class_weights: neg,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Puts mass `p_plus` (`p_minus`) on the diverse class of each sign and
    /// spreads the rest uniformly over that sign's other feasible classes.
    pub fn from_diversity(d: usize, p_plus: f64, p_minus: f64, prob_positive: f64) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d must be >= 1"));
        }
        let spread = |label: Label, diverse: PatternSet, p: f64| -> Result<BTreeMap<PatternSet, f64>> {
            if !(0.0..=1.0).contains(&p) {
                return Err(invalid(format!("diversity probability {p} outside [0,1]")));
            }
            let others: Vec<PatternSet> = PatternSet::all()
                .filter(|s| s.label() == label && *s != diverse && s.feasible(d))
                .collect();
            let mut map: BTreeMap<PatternSet, f64> = PatternSet::all().filter(|s| s.label() == label).map(|s| (s, 0.0)).collect();
            map.insert(diverse, p);
            let rest = 1.0 - p;
            if rest > 0.0 {
                if others.is_empty() {
                    return Err(Error::UnsatisfiableDistribution(format!(
                        "no non-diverse {label} class to carry mass {rest}"
                    )));
                }
                for s in &others {
                    map.insert(*s, rest / others.len() as f64);
                }
            }
            Ok(map)
        };
        let spec = DistributionSpec {
            d,
            prob_positive,
            mode: DistributionMode::ClassWeighted,
            positive_class_weights: spread(Label::Positive, PatternSet::DIVERSE_POSITIVE, p_plus)?,
            negative_class_weights: spread(Label::Negative, PatternSet::DIVERSE_NEGATIVE, p_minus)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Explicit class weights. Missing classes get weight 0.
    pub fn class_weighted(
        d: usize,
        prob_positive: f64,
        positive: impl IntoIterator<Item = (PatternSet, f64)>,
        negative: impl IntoIterator<Item = (PatternSet, f64)>,
    ) -> Result<Self> {
        let mut pos: BTreeMap<PatternSet, f64> = PatternSet::all()
            .filter(|s| s.label() == Label::Positive)
            .map(|s| (s, 0.0))
            .collect();
        let mut neg: BTreeMap<PatternSet, f64> = PatternSet::all()
            .filter(|s| s.label() == Label::Negative)
            .map(|s| (s, 0.0))
            .collect();
        for (s, w) in positive {
            if s.label() != Label::Positive {
                return Err(invalid(format!("class {s} is negative but listed as positive")));
            }
            pos.insert(s, w);
        }
        for (s, w) in negative {
            if s.label() != Label::Negative {
                return Err(invalid(format!("class {s} is positive but listed as negative")));
            }
            neg.insert(s, w);
        }
        let spec = DistributionSpec {
            d,
            prob_positive,
            mode: DistributionMode::ClassWeighted,
            positive_class_weights: pos,
            negative_class_weights: neg,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(invalid("d must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.prob_positive) {
            return Err(invalid(format!("prob_positive {} outside [0,1]", self.prob_positive)));
        }
        for (label, map, prior) in [
            (Label::Positive, &self.positive_class_weights, self.prob_positive),
            (Label::Negative, &self.negative_class_weights, 1.0 - self.prob_positive),
        ] {
            let mut sum = 0.0;
            for (s, &w) in map {
                if s.label() != label {
                    return Err(invalid(format!("class {s} filed under the wrong sign")));
                }
                if !(w >= 0.0) || !w.is_finite() {
                    return Err(invalid(format!("weight {w} for class {s} is not a probability")));
                }
                sum += w;
            }
            if prior == 0.0 && map.values().all(|&w| w == 0.0) {
                continue;
            }
            if (sum - 1.0).abs() > WEIGHT_TOL {
                return Err(invalid(format!("{label} class weights sum to {sum}, not 1")));
            }
            let infeasible: f64 = map.iter().filter(|(s, _)| !s.feasible(self.d)).map(|(_, w)| w).sum();
            if infeasible > 0.0 {
                return Err(Error::UnsatisfiableDistribution(format!(
                    "{label} weight {infeasible} sits on classes larger than d = {}",
                    self.d
                )));
            }
        }
        Ok(())
    }

    /// Within-sign weight of `set`.
    pub fn class_weight(&self, set: PatternSet) -> f64 {
        let map = match set.label() {
            Label::Positive => &self.positive_class_weights,
            Label::Negative => &self.negative_class_weights,
        };
        map.get(&set).copied().unwrap_or(0.0)
    }

    /// Probability of drawing an input of class `set` (sign prior included).
    pub fn class_mass(&self, set: PatternSet) -> f64 {
        let prior = match set.label() {
            Label::Positive => self.prob_positive,
            Label::Negative => 1.0 - self.prob_positive,
        };
        prior * self.class_weight(set)
    }

    /// Within-sign probability of the diverse class.
    pub fn p_plus(&self) -> f64 {
        self.class_weight(PatternSet::DIVERSE_POSITIVE)
    }

    pub fn p_minus(&self) -> f64 {
        self.class_weight(PatternSet::DIVERSE_NEGATIVE)
    }

    pub fn sampler(&self) -> Result<Sampler> {
        Sampler::new(self)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// On-disk form of [`DistributionSpec`].
///
/// ```toml
/// d = 10
/// prob_positive = 0.5
/// mode = "class-weighted"
///
/// [positive_weights]
/// "1,2,3,4" = 0.5
/// "1" = 0.045454545454545456
///
/// [negative_weights]
/// "2,4" = 0.9
/// "2" = 0.05
/// "4" = 0.05
/// ```
///
/// In `uniform` mode the weight tables may be omitted; they are recomputed
/// from `d`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    d: usize,
    #[serde(default = "half")]
    prob_positive: f64,
    mode: DistributionMode,
    #[serde(default)]
    positive_weights: BTreeMap<String, f64>,
    #[serde(default)]
    negative_weights: BTreeMap<String, f64>,
}

fn half() -> f64 {
    0.5
}

impl TryFrom<DistributionFile> for DistributionSpec {
    type Error = Error;

    fn try_from(f: DistributionFile) -> Result<Self> {
        match f.mode {
            DistributionMode::Uniform => {
                let spec = DistributionSpec::uniform_with_prior(f.d, f.prob_positive)?;
                for (key, w) in f.positive_weights.iter().chain(&f.negative_weights) {
                    let set: PatternSet = key.parse()?;
                    if (spec.class_weight(set) - w).abs() > 1e-9 {
                        return Err(Error::Config(format!(
                            "uniform mode: weight {w} for class {set} contradicts the uniform value {}",
                            spec.class_weight(set)
                        )));
                    }
                }
                Ok(spec)
            }
            DistributionMode::ClassWeighted => {
                let parse = |m: &BTreeMap<String, f64>| -> Result<Vec<(PatternSet, f64)>> {
                    m.iter().map(|(k, &w)| Ok((k.parse::<PatternSet>()?, w))).collect()
                };
                DistributionSpec::class_weighted(f.d, f.prob_positive, parse(&f.positive_weights)?, parse(&f.negative_weights)?)
            }
        }
    }
}

impl From<DistributionSpec> for DistributionFile {
    fn from(s: DistributionSpec) -> Self {
        let keyed = |m: &BTreeMap<PatternSet, f64>| m.iter().map(|(k, &w)| (k.key(), w)).collect();
        DistributionFile {
            d: s.d,
            prob_positive: s.prob_positive,
            mode: s.mode,
            positive_weights: keyed(&s.positive_class_weights),
            negative_weights: keyed(&s.negative_class_weights),
        }
    }
}

/// Precomputed sampler for a [`DistributionSpec`].
#[derive(Clone, Debug)]
pub struct Sampler {
    d: usize,
    prob_positive: f64,
    positive: Option<(Vec<PatternSet>, WeightedIndex<f64>)>,
    negative: Option<(Vec<PatternSet>, WeightedIndex<f64>)>,
}

impl Sampler {
    pub fn new(dist: &DistributionSpec) -> Result<Self> {
        dist.validate()?;
        let table = |map: &BTreeMap<PatternSet, f64>| {
            let classes: Vec<PatternSet> = map.iter().filter(|(_, &w)| w > 0.0).map(|(s, _)| *s).collect();
            let weights: Vec<f64> = classes.iter().map(|s| map[s]).collect();
            WeightedIndex::new(weights).ok().map(|w| (classes, w))
        };
        Ok(Sampler {
            d: dist.d,
            prob_positive: dist.prob_positive,
            positive: table(&dist.positive_class_weights),
            negative: table(&dist.negative_class_weights),
        })
    }

    /// Draws a labeled input.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(BinaryInput, Label)> {
        let label = if rng.random::<f64>() < self.prob_positive {
            Label::Positive
        } else {
            Label::Negative
        };
        let x = self.sample_with_label(label, rng)?;
        Ok((x, label))
    }

    /// Draws an input conditioned on its label.
    pub fn sample_with_label<R: Rng + ?Sized>(&self, label: Label, rng: &mut R) -> Result<BinaryInput> {
        let table = match label {
            Label::Positive => &self.positive,
            Label::Negative => &self.negative,
        };
        let (classes, index) = table
            .as_ref()
            .ok_or_else(|| Error::UnsatisfiableDistribution(format!("no {label} class carries positive weight")))?;
        let class = classes[index.sample(rng)];
        Ok(sample_arrangement(class, self.d, rng))
    }
}

/// Uniformly random string of `d` patterns whose pattern set is exactly
/// `class` (rejection sampling; `class` must be feasible).
pub fn sample_arrangement<R: Rng + ?Sized>(class: PatternSet, d: usize, rng: &mut R) -> BinaryInput {
    assert!(class.feasible(d), "class {class} does not fit in {d} slots");
    let members = class.members();
    loop {
        let patterns: Vec<Pattern> = (0..d).map(|_| members[rng.random_range(0..members.len())]).collect();
        let x = BinaryInput { patterns };
        if x.pattern_set() == class {
            return x;
        }
    }
}

/// Draws one labeled input from `dist`.
pub fn sample<R: Rng + ?Sized>(dist: &DistributionSpec, rng: &mut R) -> Result<(BinaryInput, Label)> {
    dist.sampler()?.sample(rng)
}

/// `p* = min` over the four critical classes of their probability mass.
pub fn p_star(dist: &DistributionSpec) -> f64 {
    critical_classes()
        .into_iter()
        .map(|s| dist.class_mass(s))
        .fold(f64::INFINITY, f64::min)
}

/// Exact 0-1 test error of a classifier that is constant on each class.
///
/// Every class that is feasible at `dist.d` must have a decision.
pub fn exact_test_error(decisions: &BTreeMap<PatternSet, Label>, dist: &DistributionSpec) -> Result<f64> {
    let mut err = 0.0;
    for set in PatternSet::all().filter(|s| s.feasible(dist.d)) {
        let decision = decisions.get(&set).ok_or_else(|| Error::IncompleteDecisions(set.to_string()))?;
        if *decision != set.label() {
            err += dist.class_mass(set);
        }
    }
    Ok(err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn enumerate_strings(d: usize) -> impl Iterator<Item = BinaryInput> {
        (0..4usize.pow(d as u32)).map(move |mut n| {
            let patterns = (0..d)
                .map(|_| {
                    let p = Pattern::ALL[n % 4];
                    n /= 4;
                    p
                })
                .collect();
            BinaryInput { patterns }
        })
    }

    #[test]
    fn pattern_coordinates() {
        assert_eq!(pattern_vec(1).unwrap(), [1, 1]);
        assert_eq!(pattern_vec(2).unwrap(), [1, -1]);
        assert_eq!(pattern_vec(3).unwrap(), [-1, -1]);
        assert_eq!(pattern_vec(4).unwrap(), [-1, 1]);
        assert!(matches!(pattern_vec(0), Err(Error::InvalidArgument(_))));
        assert!(matches!(pattern_vec(5), Err(Error::InvalidArgument(_))));
        for p in Pattern::ALL {
            let [a, b] = p.coords();
            assert_eq!(p.negated().coords(), [-a, -b]);
            assert_eq!(Pattern::from_coords(p.coords()).unwrap(), p);
        }
    }

    #[test]
    fn labels_follow_rule() {
        let x = |i: &[u8]| BinaryInput::from_indices(i).unwrap();
        assert_eq!(label_of(&x(&[2, 2, 2, 2])), Label::Negative);
        assert_eq!(label_of(&x(&[2, 4, 1, 2])), Label::Positive);
        assert_eq!(label_of(&x(&[3, 3, 3, 3])), Label::Positive);
    }

    #[test]
    fn pattern_sets_and_diversity() {
        let x = |i: &[u8]| BinaryInput::from_indices(i).unwrap();
        let s = pattern_set_of(&x(&[1, 2, 3, 4]));
        assert_eq!(s, PatternSet::DIVERSE_POSITIVE);
        assert_eq!(s.label(), Label::Positive);
        let s = pattern_set_of(&x(&[2, 4, 2, 4]));
        assert_eq!(s.key(), "2,4");
        assert_eq!(s.label(), Label::Negative);
        assert_eq!(pattern_set_of(&x(&[2, 2, 2, 2])).key(), "2");

        assert!(is_diverse(&x(&[1, 2, 3, 4])));
        assert!(is_diverse(&x(&[2, 4, 4, 4])));
        assert!(!is_diverse(&x(&[1, 2, 4, 2])));
    }

    #[test]
    fn fifteen_classes() {
        let all: Vec<_> = PatternSet::all().collect();
        assert_eq!(all.len(), 15);
        assert_eq!(all.iter().filter(|s| s.label() == Label::Positive).count(), 12);
        assert_eq!(all.iter().filter(|s| s.label() == Label::Negative).count(), 3);

        let c4 = enumerate_classes(4).unwrap();
        assert_eq!(c4.len(), 15);
        assert!(c4.iter().all(|c| c.feasible));
        let c24 = c4.iter().find(|c| c.set.key() == "2,4").unwrap();
        assert_eq!(
            c24.representative.as_ref().unwrap(),
            &BinaryInput::from_indices(&[2, 4, 2, 2]).unwrap()
        );

        let c2 = enumerate_classes(2).unwrap();
        let full = c2.iter().find(|c| c.set == PatternSet::DIVERSE_POSITIVE).unwrap();
        assert!(!full.feasible);
        assert!(full.representative.is_none());
        for c in c4 {
            let rep = c.representative.unwrap();
            assert_eq!(rep.pattern_set(), c.set);
            assert_eq!(rep.label(), c.set.label());
        }
        assert!(enumerate_classes(0).is_err());
    }

    #[test]
    fn pattern_set_keys_round_trip() {
        for s in PatternSet::all() {
            assert_eq!(s.key().parse::<PatternSet>().unwrap(), s);
        }
        assert!("".parse::<PatternSet>().is_err());
        assert!("5".parse::<PatternSet>().is_err());
        assert_eq!("{4, 2}".parse::<PatternSet>().unwrap(), PatternSet::DIVERSE_NEGATIVE);
    }

    #[test]
    fn diversity_probabilities_examples() {
        let printed = uniform_diversity_probs(4, DiversityMode::AsPrinted).unwrap();
        assert_eq!(printed.p_plus_f64(), 0.09375);
        assert_eq!(printed.p_minus_f64(), 0.875);
        let cond = uniform_diversity_probs(4, DiversityMode::Conditional).unwrap();
        assert_eq!(cond.p_plus, Ratio::new(24, 240));
        assert_eq!(cond.p_plus_f64(), 0.1);
        let d1 = uniform_diversity_probs(1, DiversityMode::AsPrinted).unwrap();
        assert_eq!(d1.p_plus, Ratio::new(0, 1));
        assert!(uniform_diversity_probs(0, DiversityMode::AsPrinted).is_err());
    }

    #[test]
    fn diversity_probabilities_match_enumeration() {
        for d in 1..=8 {
            let (mut pos, mut pos_div, mut neg, mut neg_div) = (0i128, 0i128, 0i128, 0i128);
            for x in enumerate_strings(d) {
                match (x.label(), x.is_diverse()) {
                    (Label::Positive, true) => {
                        pos += 1;
                        pos_div += 1
                    }
                    (Label::Positive, false) => pos += 1,
                    (Label::Negative, true) => {
                        neg += 1;
                        neg_div += 1
                    }
                    (Label::Negative, false) => neg += 1,
                }
            }
            let total = pos + neg;
            let printed = uniform_diversity_probs(d, DiversityMode::AsPrinted).unwrap();
            let cond = uniform_diversity_probs(d, DiversityMode::Conditional).unwrap();
            assert_eq!(printed.p_minus, Ratio::new(neg_div, neg), "d={d}");
            assert_eq!(cond.p_minus, Ratio::new(neg_div, neg), "d={d}");
            // The printed p₊ is one minus the non-diverse fraction of all strings.
            assert_eq!(printed.p_plus, Ratio::new(pos_div, total), "d={d}");
            assert_eq!(cond.p_plus, Ratio::new(pos_div, pos), "d={d}");
        }
    }

    #[test]
    fn class_counts_match_enumeration() {
        for d in 1..=6 {
            let mut counts = BTreeMap::new();
            for x in enumerate_strings(d) {
                *counts.entry(x.pattern_set()).or_insert(0i128) += 1;
            }
            for s in PatternSet::all() {
                assert_eq!(class_count(s, d).unwrap(), counts.get(&s).copied().unwrap_or(0), "{s} d={d}");
            }
        }
    }

    #[test]
    fn p_star_examples() {
        let [a1, a2, a3, a4] = critical_classes();
        assert_eq!(
            (a1.key(), a2.key(), a3.key(), a4.key()),
            ("2".into(), "4".into(), "1,2,4".into(), "2,3,4".into())
        );

        // Masses 0.01, 0.02, 0.03, 0.04 on the critical classes.
        let dist = DistributionSpec::class_weighted(
            4,
            0.5,
            [(a3, 0.06), (a4, 0.08), (PatternSet::DIVERSE_POSITIVE, 0.86)],
            [(a1, 0.02), (a2, 0.04), (PatternSet::DIVERSE_NEGATIVE, 0.94)],
        )
        .unwrap();
        assert!((p_star(&dist) - 0.01).abs() < 1e-15);

        let zero = DistributionSpec::class_weighted(
            4,
            0.5,
            [(PatternSet::DIVERSE_POSITIVE, 1.0)],
            [(a2, 0.5), (PatternSet::DIVERSE_NEGATIVE, 0.5)],
        )
        .unwrap();
        assert_eq!(p_star(&zero), 0.0);

        // Uniform d = 4 against brute-force enumeration of all 256 strings.
        let uni = DistributionSpec::uniform(4).unwrap();
        let mut counts = [0usize; 4];
        let (mut npos, mut nneg) = (0usize, 0usize);
        for x in enumerate_strings(4) {
            match x.label() {
                Label::Positive => npos += 1,
                Label::Negative => nneg += 1,
            }
            if let Some(i) = critical_classes().iter().position(|&c| c == x.pattern_set()) {
                counts[i] += 1;
            }
        }
        let brute = [
            0.5 * counts[0] as f64 / nneg as f64,
            0.5 * counts[1] as f64 / nneg as f64,
            0.5 * counts[2] as f64 / npos as f64,
            0.5 * counts[3] as f64 / npos as f64,
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        assert!((p_star(&uni) - brute).abs() < 1e-15);
    }

    #[test]
    fn uniform_weights_invariants() {
        for d in 1..=12 {
            let u = DistributionSpec::uniform(d).unwrap();
            let sp: f64 = u.positive_class_weights.values().sum();
            let sn: f64 = u.negative_class_weights.values().sum();
            assert!((sp - 1.0).abs() < 1e-12 && (sn - 1.0).abs() < 1e-12);
            for s in PatternSet::all().filter(|s| !s.feasible(d)) {
                assert_eq!(u.class_weight(s), 0.0);
            }
        }
    }

    #[test]
    fn sampling_degenerate_classes() {
        let mut rng = seeded(3);
        let all_diverse = DistributionSpec::class_weighted(
            4,
            0.5,
            [(PatternSet::DIVERSE_POSITIVE, 1.0)],
            [(PatternSet::from_indices(&[2]).unwrap(), 1.0)],
        )
        .unwrap();
        let sampler = all_diverse.sampler().unwrap();
        for _ in 0..500 {
            let (x, y) = sampler.sample(&mut rng).unwrap();
            assert_eq!(x.label(), y);
            match y {
                Label::Positive => assert!(x.is_diverse()),
                Label::Negative => assert_eq!(x, BinaryInput::from_indices(&[2, 2, 2, 2]).unwrap()),
            }
        }
    }

    #[test]
    fn infeasible_mass_is_rejected() {
        let err = DistributionSpec::class_weighted(2, 0.5, [(PatternSet::DIVERSE_POSITIVE, 1.0)], [(PatternSet::DIVERSE_NEGATIVE, 1.0)]);
        assert!(matches!(err, Err(Error::UnsatisfiableDistribution(_))));
        let err = DistributionSpec::from_diversity(3, 1.0, 0.9, 0.5);
        assert!(matches!(err, Err(Error::UnsatisfiableDistribution(_))));
    }

    #[test]
    fn sampling_frequencies_within_three_sigma() {
        let dist = DistributionSpec::from_diversity(6, 0.5, 0.9, 0.5).unwrap();
        let sampler = dist.sampler().unwrap();
        let mut rng = seeded(11);
        let n = 100_000usize;
        let mut counts: BTreeMap<PatternSet, usize> = BTreeMap::new();
        for _ in 0..n {
            let (x, _) = sampler.sample(&mut rng).unwrap();
            *counts.entry(x.pattern_set()).or_default() += 1;
        }
        for s in PatternSet::all() {
            let p = dist.class_mass(s);
            let observed = counts.get(&s).copied().unwrap_or(0) as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (observed - n as f64 * p).abs() <= 3.0 * sigma + 1e-9,
                "class {s}: observed {observed}, expected {}",
                n as f64 * p
            );
        }
    }

    #[test]
    fn exact_error_basics() {
        let dist = DistributionSpec::uniform(4).unwrap();
        let truth: BTreeMap<PatternSet, Label> = PatternSet::all().map(|s| (s, s.label())).collect();
        assert_eq!(exact_test_error(&truth, &dist).unwrap(), 0.0);

        let two = PatternSet::from_indices(&[2]).unwrap();
        let mut flipped = truth.clone();
        flipped.insert(two, Label::Positive);
        assert_eq!(exact_test_error(&flipped, &dist).unwrap(), dist.class_mass(two));

        let mut missing = truth;
        missing.remove(&two);
        assert!(matches!(exact_test_error(&missing, &dist), Err(Error::IncompleteDecisions(_))));
    }

    #[test]
    fn distribution_toml_round_trip() {
        let dist = DistributionSpec::from_diversity(10, 0.5, 0.9, 0.5).unwrap();
        let text = dist.to_toml_string().unwrap();
        assert!(text.contains("\"2,4\" = 0.9"));
        let back = DistributionSpec::from_toml_str(&text).unwrap();
        assert_eq!(back, dist);

        let uni = DistributionSpec::from_toml_str("d = 5\nmode = \"uniform\"\n").unwrap();
        assert_eq!(uni, DistributionSpec::uniform(5).unwrap());
        assert!(DistributionSpec::from_toml_str("d = 5\nmode = \"class-weighted\"\n").is_err());
    }
}
