use statrs::function::gamma::digamma;

use crate::error::{Error, Result};

/// Smallest usable segment variance. The monitor skips candidate splits with
/// a segment below it.
pub const VAR_FLOOR: f64 = 1e-12;

/// Size and centred sum of squares of one data segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub n: f64,
    pub m2: f64,
}

impl Segment {
    pub fn new(n: usize, m2: f64) -> Self {
        Self { n: n as f64, m2 }
    }

    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let m2 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        Self { n, m2 }
    }

    /// Maximum-likelihood variance.
    pub fn variance(&self) -> f64 {
        self.m2 / self.n
    }
}

/// Maximized log-likelihood ratio of a single change in mean and variance at
/// `k` for one stream:
/// `−(n_A/2) ln(S²_A/S²_T) − (n_B/2) ln(S²_B/S²_T)`.
///
/// `before` covers training plus monitoring up to `k`, `after` covers `k+1..t`
/// and `total` both. Fails with `DegenerateSegment` when any variance is below
/// [`VAR_FLOOR`].
pub fn stream_llr(before: Segment, after: Segment, total: Segment) -> Result<f64> {
    for s in [before, after, total] {
        let v = s.variance();
        if !(v >= VAR_FLOOR) {
            return Err(Error::DegenerateSegment(v));
        }
    }
    Ok(llr_from_variances(before.n, before.variance(), after.n, after.variance(), total.variance()))
}

#[inline]
pub(crate) fn llr_from_variances(na: f64, va: f64, nb: f64, vb: f64, vt: f64) -> f64 {
    -0.5 * na * (va / vt).ln() - 0.5 * nb * (vb / vt).ln()
}

/// `n ln n − n ψ((n − 1)/2)`, one term of the Bartlett correction.
pub(crate) fn bartlett_term(n: usize) -> f64 {
    let x = n as f64;
    x * x.ln() - x * digamma((x - 1.0) / 2.0)
}

/// Bartlett correction `C(k, t)` for a segment split of `m + k` and `t − k`
/// observations. Under no change `E[2ℓ] = 2C` exactly, so `ℓ/C` has null
/// mean one, its asymptotic value.
///
/// `2C = −f(m+t) + f(m+k) + f(t−k)` with `f(n) = n ln n − n ψ((n−1)/2)`.
pub fn bartlett_correction(m: usize, k: usize, t: usize) -> Result<f64> {
    if t < k + 2 || m + k < 2 {
        return Err(Error::InvalidConfig(format!(
            "Bartlett correction needs m + k >= 2 and t - k >= 2, got m = {m}, k = {k}, t = {t}"
        )));
    }
    Ok(bartlett_from_sizes(m + k, t - k))
}

pub(crate) fn bartlett_from_sizes(na: usize, nb: usize) -> f64 {
    0.5 * (-bartlett_term(na + nb) + bartlett_term(na) + bartlett_term(nb))
}

/// Cached Bartlett terms. Segment sizes grow by one per monitored step, so a
/// dense table indexed by size is filled lazily up to a cap.
#[derive(Debug, Clone, Default)]
pub(crate) struct BartlettCache {
    table: Vec<f64>,
}

const CACHE_CAP: usize = 1 << 20;

impl BartlettCache {
    pub fn term(&mut self, n: usize) -> f64 {
        if n >= CACHE_CAP {
            return bartlett_term(n);
        }
        if n >= self.table.len() {
            let start = self.table.len();
            self.table.extend((start..=n).map(|i| if i < 2 { f64::NAN } else { bartlett_term(i) }));
        }
        self.table[n]
    }

    pub fn correction(&mut self, na: usize, nb: usize) -> f64 {
        0.5 * (-self.term(na + nb) + self.term(na) + self.term(nb))
    }
}

/// One stream's contribution `log(1 − p0 + p0·exp(x))` to the mixture
/// statistic, stable for large `x`.
#[inline]
pub fn mixture_term(x: f64, p0: f64) -> f64 {
    if x >= 0.0 {
        x + (p0 + (1.0 - p0) * (-x).exp()).ln()
    } else {
        (p0 * x.exp_m1()).ln_1p()
    }
}

/// Corrected mixture statistic `Σ_d log(1 − p0 + p0·exp(ℓ_d / C))`.
pub fn mixture_statistic(llrs: &[f64], correction: f64, p0: f64) -> f64 {
    llrs.iter().map(|&l| mixture_term(l / correction, p0)).sum()
}
