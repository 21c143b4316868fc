use serde::{Deserialize, Serialize};

use xordlab::patterns::{class_count, enumerate_classes, p_star, uniform_diversity_probs, DistributionSpec, DiversityMode, Label};
use xordlab::rng::trial_rng;
use xordlab::xord_lab::sample_complexity_bounds;

use crate::{Ctx, Verdict};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub p_plus: f64,
    pub p_minus: f64,
    /// Defaults to the admissible floor `1 − p₊p₋(1 − c − 16e⁻⁸)`.
    pub delta: Option<f64>,
    pub c: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        BoundsConfig {
            p_plus: 0.98,
            p_minus: 0.98,
            delta: None,
            c: 1e-10,
        }
    }
}

pub fn bounds(cfg: &BoundsConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let floor = 1.0 - cfg.p_plus * cfg.p_minus * (1.0 - cfg.c - 16.0 * (-8.0f64).exp());
    let r = sample_complexity_bounds(cfg.p_plus, cfg.p_minus, cfg.delta.unwrap_or(floor), cfg.c)?;
    println!("p+ = {}, p- = {}, delta = {}, c = {}", r.p_plus, r.p_minus, r.delta, r.c);
    println!("m1 = {}", r.m1_bound);
    println!("m2 = {:.4}", r.m2_bound);
    ctx.out.json(".json", &r)?;
    Ok(Verdict::Done)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistProbeConfig {
    /// Slots per input; ignored when `distribution` is given.
    pub d: usize,
    /// Draws for the empirical class frequencies.
    pub samples: usize,
    /// Defaults to the uniform distribution with `prob_positive = 1/2`.
    pub distribution: Option<DistributionSpec>,
}

impl Default for DistProbeConfig {
    fn default() -> Self {
        DistProbeConfig {
            d: 10,
            samples: 10_000,
            distribution: None,
        }
    }
}

#[derive(Serialize)]
struct Pair {
    p_plus: f64,
    p_minus: f64,
}

#[derive(Serialize)]
struct ClassRow {
    class: String,
    label: i8,
    diverse: bool,
    feasible: bool,
    /// Number of pattern strings in the class, as a decimal string.
    strings: String,
    mass: f64,
    empirical: f64,
}

#[derive(Serialize)]
struct DistProbe {
    d: usize,
    uniform_as_printed: Option<Pair>,
    uniform_conditional: Option<Pair>,
    distribution: Pair,
    p_star: f64,
    samples: usize,
    classes: Vec<ClassRow>,
}

pub fn dist_probe(cfg: &DistProbeConfig, ctx: &mut Ctx) -> anyhow::Result<Verdict> {
    let dist = match &cfg.distribution {
        Some(d) => d.clone(),
        None => DistributionSpec::uniform(cfg.d)?,
    };
    dist.validate()?;
    let d = dist.d;
    let uniform = |mode| {
        uniform_diversity_probs(d, mode).ok().map(|p| Pair {
            p_plus: p.p_plus_f64(),
            p_minus: p.p_minus_f64(),
        })
    };
    let sampler = dist.sampler()?;
    let mut rng = trial_rng(ctx.seed, 0);
    let mut hits = std::collections::BTreeMap::new();
    for _ in 0..cfg.samples {
        let (x, _) = sampler.sample(&mut rng)?;
        *hits.entry(x.pattern_set()).or_insert(0usize) += 1;
    }
    let classes = enumerate_classes(d)?
        .into_iter()
        .map(|c| ClassRow {
            class: c.set.key(),
            label: c.set.label().sign(),
            diverse: c.set.is_diverse(),
            feasible: c.feasible,
            strings: class_count(c.set, d).map(|n| n.to_string()).unwrap_or_default(),
            mass: dist.class_mass(c.set),
            empirical: hits.get(&c.set).copied().unwrap_or(0) as f64 / cfg.samples.max(1) as f64,
        })
        .collect::<Vec<_>>();
    let probe = DistProbe {
        d,
        uniform_as_printed: uniform(DiversityMode::AsPrinted),
        uniform_conditional: uniform(DiversityMode::Conditional),
        distribution: Pair {
            p_plus: dist.p_plus(),
            p_minus: dist.p_minus(),
        },
        p_star: p_star(&dist),
        samples: cfg.samples,
        classes,
    };
    if let (Some(a), Some(c)) = (&probe.uniform_as_printed, &probe.uniform_conditional) {
        println!(
            "uniform, d = {d}: p+ as printed {:.6}, conditional {:.6}; p- {:.6}",
            a.p_plus, c.p_plus, c.p_minus
        );
    }
    println!(
        "distribution: p+ = {:.6}, p- = {:.6}, p* = {:.6}",
        probe.distribution.p_plus, probe.distribution.p_minus, probe.p_star
    );
    println!("{:>9} {:>6} {:>12} {:>12}", "class", "label", "mass", "empirical");
    for c in &probe.classes {
        let label = if c.label == Label::Positive.sign() { "+" } else { "-" };
        println!(
            "{:>9} {:>6} {:>12.6} {:>12.6}",
            format!("{{{}}}", c.class),
            label,
            c.mass,
            c.empirical
        );
    }
    ctx.out.csv(".csv", |w| {
        for c in &probe.classes {
            w.serialize(c)?;
        }
        Ok(())
    })?;
    ctx.out.json(".json", &probe)?;
    Ok(Verdict::Done)
}
