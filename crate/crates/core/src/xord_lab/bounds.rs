use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Sample sizes separating the over-parameterized and `k = 2` networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleComplexity {
    pub p_plus: f64,
    pub p_minus: f64,
    pub delta: f64,
    pub c: f64,
    /// `1 − p₊p₋(1 − c − 16e⁻⁸)`.
    pub delta_floor: f64,
    /// Samples sufficient for the over-parameterized network.
    pub m1_bound: usize,
    /// `2·ln(48δ / (33(1 − c))) / ln(p₊p₋)`: below this many samples the
    /// `k = 2` network fails with probability above `δ`.
    pub m2_bound: f64,
}

pub fn sample_complexity_bounds(p_plus: f64, p_minus: f64, delta: f64, c: f64) -> Result<SampleComplexity> {
    for (name, p) in [("p_plus", p_plus), ("p_minus", p_minus)] {
        if !(p > 0.0 && p < 1.0) {
            return Err(invalid(format!("{name} must lie in (0, 1), got {p}")));
        }
    }
    if !(0.0..1.0).contains(&c) {
        return Err(invalid(format!("c must lie in [0, 1), got {c}")));
    }
    let q = p_plus * p_minus;
    let delta_floor = 1.0 - q * (1.0 - c - 16.0 * (-8.0f64).exp());
    if !(delta >= delta_floor) || !(delta < 1.0) {
        return Err(invalid(format!("delta = {delta} outside [{delta_floor}, 1)")));
    }
    let m2_bound = 2.0 * (48.0 * delta / (33.0 * (1.0 - c))).ln() / q.ln();
    Ok(SampleComplexity {
        p_plus,
        p_minus,
        delta,
        c,
        delta_floor,
        m1_bound: 2,
        m2_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn high_diversity_example() {
        let c = 1e-10;
        let floor = 1.0 - 0.98f64 * 0.98 * (1.0 - c - 16.0 * (-8.0f64).exp());
        let r = sample_complexity_bounds(0.98, 0.98, floor, c).unwrap();
        assert_eq!(r.delta_floor, floor);
        assert_eq!(r.m1_bound, 2);
        // Independent evaluation of the same closed form.
        let expect = 2.0 * (48.0 * floor / 33.0).ln() / (0.98f64 * 0.98).ln();
        assert!((r.m2_bound - expect).abs() < 1e-6);
        assert!((r.m2_bound - 129.0).abs() <= 10.0, "{}", r.m2_bound);
    }

    #[test]
    fn lower_diversity_example() {
        let r = sample_complexity_bounds(0.92, 0.92, 0.16, 1e-10).unwrap();
        assert!((r.m2_bound - 17.0).abs() <= 3.0, "{}", r.m2_bound);
    }

    #[test]
    fn bound_diverges_as_diversity_approaches_one() {
        let mut last = 0.0;
        for p in [0.99, 0.999, 0.9999, 0.99999] {
            let floor = 1.0 - p * p * (1.0 - 16.0 * (-8.0f64).exp());
            let r = sample_complexity_bounds(p, p, floor, 0.0).unwrap();
            assert!(r.m2_bound > last);
            last = r.m2_bound;
        }
        assert!(last > 1e4);
    }

    #[test]
    fn delta_below_floor_is_rejected() {
        assert!(sample_complexity_bounds(0.98, 0.98, 0.01, 1e-10).is_err());
        assert!(sample_complexity_bounds(1.0, 0.98, 0.5, 0.0).is_err());
    }
}
