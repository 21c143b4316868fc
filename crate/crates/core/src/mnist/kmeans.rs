//! Spherical k-means on unit-normalized filters.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    /// Unit vectors.
    pub centers: Vec<Vec<f64>>,
    /// Center index per input vector; `None` for excluded zero-norm inputs.
    pub assignments: Vec<Option<usize>>,
    /// `Σ ‖x − c‖²` over the normalized inputs.
    pub inertia: f64,
    /// Angle in degrees from each input to its nearest center; `None` when
    /// excluded.
    pub angles_deg: Vec<Option<f64>>,
    /// Inputs with zero norm.
    pub excluded: Vec<usize>,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl KMeansResult {
    pub fn angles(&self) -> Vec<f64> {
        self.angles_deg.iter().flatten().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub tolerance: f64,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 4,
            restarts: 10,
            tolerance: 1e-6,
            max_iters: 300,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &[f64]) -> Option<Vec<f64>> {
    let n = dot(v, v).sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.iter().map(|x| x / n).collect())
}

/// Nearest center by cosine (lowest index on ties) and the squared distance.
fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let s = dot(x, c);
        if s > best.1 {
            best = (i, s);
        }
    }
    (best.0, (2.0 - 2.0 * best.1).max(0.0))
}

fn seed_plus_plus<R: Rng + ?Sized>(xs: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centers = vec![xs[rng.random_range(0..xs.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = xs.iter().map(|x| nearest(x, &centers).1).collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = xs.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if r < *di {
                    pick = i;
                    break;
                }
                r -= di;
            }
            pick
        } else {
            rng.random_range(0..xs.len())
        };
        centers.push(xs[next].clone());
    }
    centers
}

struct Run {
    centers: Vec<Vec<f64>>,
    inertia: f64,
    history: Vec<f64>,
}

fn lloyd<R: Rng + ?Sized>(xs: &[Vec<f64>], cfg: &KMeansConfig, rng: &mut R) -> Run {
    let mut centers = seed_plus_plus(xs, cfg.k, rng);
    let dim = xs[0].len();
    let mut history = Vec::new();
    let mut last = f64::INFINITY;
    loop {
        let (assign, dists): (Vec<usize>, Vec<f64>) = xs.iter().map(|x| nearest(x, &centers)).unzip();
        let inertia: f64 = dists.iter().sum();
        history.push(inertia);
        let done = last - inertia <= cfg.tolerance || history.len() >= cfg.max_iters;
        last = inertia;
        if done {
            return Run { centers, inertia, history };
        }
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        for (x, &a) in xs.iter().zip(&assign) {
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            // An empty or degenerate cluster keeps its previous center.
            if let Some(u) = normalize(s) {
                *c = u;
            }
        }
    }
}

/// Best of `cfg.restarts` k-means++-seeded Lloyd runs on the normalized
/// inputs. Zero-norm inputs are excluded and listed.
pub fn spherical_kmeans<R: Rng + ?Sized>(vectors: &[Vec<f64>], cfg: &KMeansConfig, rng: &mut R) -> Result<KMeansResult> {
    if cfg.k == 0 || cfg.restarts == 0 {
        return Err(invalid("k-means needs k >= 1 and at least one restart"));
    }
    let mut xs = Vec::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, v) in vectors.iter().enumerate() {
        match normalize(v) {
            Some(u) => {
                xs.push(u);
                kept.push(i);
            }
            None => excluded.push(i),
        }
    }
    if xs.len() < cfg.k {
        return Err(invalid(format!("{} usable vectors for k = {}", xs.len(), cfg.k)));
    }
    if let Some(v) = xs.iter().find(|v| v.len() != xs[0].len()) {
        return Err(invalid(format!("mixed dimensions {} and {}", xs[0].len(), v.len())));
    }
    let mut best: Option<Run> = None;
    for _ in 0..cfg.restarts {
        let run = lloyd(&xs, cfg, rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let best = best.expect("restarts >= 1");
    let mut assignments = vec![None; vectors.len()];
    let mut angles_deg = vec![None; vectors.len()];
    for (x, &i) in xs.iter().zip(&kept) {
        let (a, _) = nearest(x, &best.centers);
        assignments[i] = Some(a);
        angles_deg[i] = Some(dot(x, &best.centers[a]).clamp(-1.0, 1.0).acos().to_degrees());
    }
    Ok(KMeansResult {
        centers: best.centers,
        assignments,
        inertia: best.inertia,
        angles_deg,
        excluded,
        inertia_history: best.history,
    })
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn basis(i: usize, dim: usize, scale: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[i] = scale;
        v
    }

    #[test]
    fn orthogonal_clusters_have_zero_angles() {
        let xs: Vec<Vec<f64>> = (0..40).map(|j| basis(j % 4, 9, 1.0 + j as f64)).collect();
        let r = spherical_kmeans(&xs, &KMeansConfig::default(), &mut seeded(1)).unwrap();
        assert!(r.angles().iter().all(|&a| a < 1e-6));
        for c in &r.centers {
            assert!((dot(c, c) - 1.0).abs() < 1e-12);
        }
        for j in 4..40 {
            assert_eq!(r.assignments[j], r.assignments[j % 4]);
        }
    }

    #[test]
    fn zero_filters_are_excluded() {
        let mut xs: Vec<Vec<f64>> = (0..8).map(|j| basis(j % 4, 4, 1.0)).collect();
        xs.push(vec![0.0; 4]);
        let r = spherical_kmeans(&xs, &KMeansConfig::default(), &mut seeded(2)).unwrap();
        assert_eq!(r.excluded, vec![8]);
        assert_eq!(r.assignments[8], None);
        assert_eq!(r.angles().len(), 8);
    }

    #[test]
    fn inertia_never_increases() {
        let mut rng = seeded(3);
        let xs: Vec<Vec<f64>> = (0..120).map(|_| (0..9).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let r = spherical_kmeans(&xs, &KMeansConfig::default(), &mut rng).unwrap();
        for w in r.inertia_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for (x, a) in xs.iter().zip(&r.assignments) {
            let u = normalize(x).unwrap();
            let a = a.unwrap();
            for c in &r.centers {
                assert!(dot(&u, &r.centers[a]) >= dot(&u, c) - 1e-12);
            }
        }
    }

    #[test]
    fn too_few_vectors() {
        let xs = vec![vec![1.0, 0.0]; 3];
        assert!(spherical_kmeans(&xs, &KMeansConfig::default(), &mut seeded(0)).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
