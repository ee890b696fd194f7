use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

/// Quantile of `Beta(a, b)` at probability `p`, by bisection on the
/// regularized incomplete beta function.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One-sided Clopper–Pearson upper bound for a proportion with `x`
/// successes out of `n` at confidence `level`.
pub fn clopper_pearson_upper(x: usize, n: usize, level: f64) -> f64 {
    if x >= n {
        1.0
    } else {
        beta_quantile(level, x as f64 + 1.0, (n - x) as f64)
    }
}

/// One-sided Clopper–Pearson lower bound.
pub fn clopper_pearson_lower(x: usize, n: usize, level: f64) -> f64 {
    if x == 0 {
        0.0
    } else {
        beta_quantile(1.0 - level, x as f64, (n - x) as f64 + 1.0)
    }
}

/// Proportion estimate with a two-sided Clopper–Pearson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl Proportion {
    pub fn new(successes: usize, trials: usize, level: f64) -> Self {
        let tail = 0.5 * (1.0 + level);
        Self {
            successes,
            trials,
            estimate: if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 },
            lower: clopper_pearson_lower(successes, trials, tail),
            upper: clopper_pearson_upper(successes, trials, tail),
            level,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_quantile() {
        // Beta(1, 1) is uniform
        assert!((beta_quantile(0.3, 1.0, 1.0) - 0.3).abs() < 1e-12);
        // Beta(2, 1) has cdf x²
        assert!((beta_quantile(0.25, 2.0, 1.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_successes_upper_bound() {
        // closed form 1 − (1 − level)^(1/n)
        let u = clopper_pearson_upper(0, 50, 0.95);
        assert!((u - (1.0 - 0.05f64.powf(1.0 / 50.0))).abs() < 1e-10);
    }

    #[test]
    fn interval_contains_estimate() {
        let p = Proportion::new(100, 2000, 0.95);
        assert!(p.lower < 0.05 && p.upper > 0.05);
        assert!((p.lower - 0.0409).abs() < 1e-3 && (p.upper - 0.0605).abs() < 1e-3);
        let all = Proportion::new(10, 10, 0.95);
        assert_eq!(all.upper, 1.0);
    }
}
