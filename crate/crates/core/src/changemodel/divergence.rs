use serde::{Deserialize, Serialize};

/// Univariate normal distribution given by mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    pub mean: f64,
    pub sdev: f64,
}

impl NormalParams {
    pub fn new(mean: f64, sdev: f64) -> Self {
        debug_assert!(sdev > 0.0, "standard deviation must be positive");
        Self { mean, sdev }
    }

    pub fn standard() -> Self {
        Self::new(0.0, 1.0)
    }
}

/// Divergence between two univariate normals, used to score how strongly a
/// projection reacts to a change.
pub trait Divergence: Send + Sync {
    fn between(&self, p: NormalParams, q: NormalParams) -> f64;
}

/// Hellinger distance, bounded in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Hellinger;

impl Divergence for Hellinger {
    fn between(&self, p: NormalParams, q: NormalParams) -> f64 {
        hellinger_normal(p, q)
    }
}

/// Hellinger distance between two normals:
/// `H² = 1 − sqrt(2σ₁σ₂ / (σ₁² + σ₂²)) · exp(−(ξ₁ − ξ₂)² / (4(σ₁² + σ₂²)))`.
///
/// Evaluated through the log of the Bhattacharyya coefficient so that small
/// distances keep full relative precision.
pub fn hellinger_normal(p: NormalParams, q: NormalParams) -> f64 {
    let (s1, s2) = (p.sdev, q.sdev);
    let var_sum = s1 * s1 + s2 * s2;
    let ds = s1 - s2;
    let dm = p.mean - q.mean;
    // ln(2σ₁σ₂/(σ₁²+σ₂²)) = −ln(1 + (σ₁−σ₂)²/(2σ₁σ₂))
    let log_bc = -0.5 * (ds * ds / (2.0 * s1 * s2)).ln_1p() - 0.25 * dm * dm / var_sum;
    (-log_bc.exp_m1()).max(0.0).sqrt().min(1.0)
}
