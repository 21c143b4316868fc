//! Deterministic parallel trials and binomial summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::{trial_rng, Rng};

/// Runs `f(index, rng)` for `index in 0..trials`, each with its own
/// generator derived from `master_seed`, and returns results in index order.
///
/// `threads = None` uses the global rayon pool. The output does not depend on
/// the thread count.
pub fn run_trials<R, F>(master_seed: u64, trials: usize, threads: Option<usize>, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, &mut Rng) -> R + Sync + Send,
{
    let job = || {
        (0..trials as u64)
            .into_par_iter()
            .map(|i| f(i, &mut trial_rng(master_seed, i)))
            .collect::<Vec<R>>()
    };
    match threads {
        None => Ok(job()),
        Some(0) => Err(invalid("threads must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| invalid(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Like [`run_trials`] for fallible trials; the first error in index order wins.
pub fn try_run_trials<R, F>(master_seed: u64, trials: usize, threads: Option<usize>, f: F) -> Result<Vec<R>>
where
    R: Send,
    F: Fn(u64, &mut Rng) -> Result<R> + Sync + Send,
{
    run_trials(master_seed, trials, threads, f)?.into_iter().collect()
}

/// A success count with its Wilson 95% interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub fraction: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: usize, trials: usize) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, trials, 1.959_963_984_540_054);
        Proportion {
            successes,
            trials,
            fraction: if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 },
            ci_low,
            ci_high,
        }
    }

    pub fn count<I: IntoIterator<Item = bool>>(flags: I) -> Self {
        let (mut s, mut n) = (0, 0);
        for f in flags {
            s += f as usize;
            n += 1;
        }
        Self::new(s, n)
    }
}

/// Wilson score interval for `successes / trials` at normal quantile `z`.
pub fn wilson_interval(successes: usize, trials: usize, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn results_independent_of_thread_count() {
        let f = |i: u64, rng: &mut Rng| (i, rng.random::<u64>());
        let a = run_trials(5, 64, Some(1), f).unwrap();
        let b = run_trials(5, 64, Some(3), f).unwrap();
        let c = run_trials(5, 64, None, f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert!(a.iter().enumerate().all(|(i, r)| r.0 == i as u64));
    }

    #[test]
    fn wilson_reference_values() {
        // 50/100 at 95%: 0.4038, 0.5962
        let (lo, hi) = wilson_interval(50, 100, 1.959_963_984_540_054);
        assert!((lo - 0.403_831).abs() < 1e-5 && (hi - 0.596_169).abs() < 1e-5);
        let p = Proportion::new(0, 10);
        assert_eq!(p.ci_low, 0.0);
        assert!(p.ci_high > 0.25 && p.ci_high < 0.35);
    }

    #[test]
    fn first_error_wins() {
        let r: Result<Vec<u64>> = try_run_trials(
            1,
            10,
            Some(2),
            |i, _| {
                if i >= 3 {
                    Err(invalid(format!("trial {i}")))
                } else {
                    Ok(i)
                }
            },
        );
        assert_eq!(r.unwrap_err().to_string(), "invalid argument: trial 3");
    }
}
