//! Grid checks of which principal axis of a bivariate normal is more sensitive
//! to a given change.
//!
//! With correlation `ρ`, axis 0 (`H₁`) has variance `1 + |ρ|` and axis 1 (`H₂`)
//! variance `1 − |ρ|`. Post-change covariances are
//! `[[a₁₁², a₁₁a₂₂a₁₂ρ], [a₁₁a₂₂a₁₂ρ, a₂₂²]]` and means `(μ₁, μ₂)`. Each check
//! compares the sign of `H₂ − H₁` from [`projection_sensitivities`] with the
//! sign predicted by a closed-form region rule.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::changemodel::{projection_sensitivities, PostChangeParams};
use crate::corrcore::{eigensystem, CorrelationMatrix, EigenSystem};
use crate::error::{Error, Result};

/// Sensitivities closer than this count as equal.
const EQUAL_TOL: f64 = 1e-12;

/// Mean shifts checked in each coordinate: −2 to 2 in steps of 0.25.
const MEAN_STEPS: i32 = 8;
const MEAN_STEP: f64 = 0.25;

/// Largest scale factor on the variance and correlation grids.
const FACTOR_MAX: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropsConfig {
    /// Spacing of the `|ρ|` grid and of the scale-factor grids.
    pub resolution: f64,
    /// Extra correlations checked in addition to the grid.
    pub extra_rho: Vec<f64>,
    /// Points this close to a region boundary are excluded.
    pub boundary_tol: f64,
}

impl Default for PropsConfig {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            extra_rho: Vec::new(),
            boundary_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    H2Greater,
    H2Less,
    Equal,
}

/// Parameters of one bivariate change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rho: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub a11: f64,
    pub a22: f64,
    pub a12: f64,
}

impl GridPoint {
    fn unchanged(rho: f64) -> Self {
        Self {
            rho,
            mu1: 0.0,
            mu2: 0.0,
            a11: 1.0,
            a22: 1.0,
            a12: 1.0,
        }
    }

    fn post(&self) -> PostChangeParams {
        let off = self.a11 * self.a22 * self.a12 * self.rho;
        PostChangeParams {
            mean: DVector::from_vec(vec![self.mu1, self.mu2]),
            cov: DMatrix::from_row_slice(2, 2, &[self.a11 * self.a11, off, off, self.a22 * self.a22]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub point: GridPoint,
    pub h1: f64,
    pub h2: f64,
    pub expected: Expected,
}

/// Agreement counts for one region rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropositionCheck {
    pub name: String,
    pub rule: String,
    pub checked: usize,
    pub excluded: usize,
    /// Points outside the rule's parameter domain, skipped.
    pub outside_domain: usize,
    pub violations: Vec<Violation>,
    pub excluded_points: Vec<GridPoint>,
}

impl PropositionCheck {
    fn new(name: &str, rule: &str) -> Self {
        Self {
            name: name.into(),
            rule: rule.into(),
            checked: 0,
            excluded: 0,
            outside_domain: 0,
            violations: Vec::new(),
            excluded_points: Vec::new(),
        }
    }

    fn record(&mut self, es: &EigenSystem, point: GridPoint, expected: Option<Expected>) -> Result<Ordering> {
        let h = projection_sensitivities(es, &point.post())?;
        let observed = Ordering::of(h[0], h[1]);
        match expected {
            None => {
                self.excluded += 1;
                self.excluded_points.push(point);
            }
            Some(e) => {
                self.checked += 1;
                if !observed.matches(e) {
                    self.violations.push(Violation {
                        point,
                        h1: h[0],
                        h2: h[1],
                        expected: e,
                    });
                }
            }
        }
        Ok(observed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ordering {
    Greater,
    Less,
    Equal,
}

impl Ordering {
    fn of(h1: f64, h2: f64) -> Self {
        if (h2 - h1).abs() < EQUAL_TOL {
            Ordering::Equal
        } else if h2 > h1 {
            Ordering::Greater
        } else {
            Ordering::Less
        }
    }

    fn matches(self, e: Expected) -> bool {
        matches!(
            (self, e),
            (Ordering::Greater, Expected::H2Greater) | (Ordering::Less, Expected::H2Less) | (Ordering::Equal, Expected::Equal)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropsReport {
    pub config: PropsConfig,
    pub rho_grid: Vec<f64>,
    pub checks: Vec<PropositionCheck>,
    pub total_checked: usize,
    pub total_violations: usize,
    /// Mean-change points where the rule with `4/|ρ| − 2` in place of
    /// `2/|ρ| − 2` predicts the wrong sign.
    pub mean_rule_4_over_rho_disagreements: usize,
}

fn sign_rule(margin: f64, tol: f64) -> Option<Expected> {
    if margin > tol {
        Some(Expected::H2Greater)
    } else if margin < -tol {
        Some(Expected::H2Less)
    } else {
        None
    }
}

/// Margin of the mean-change rule: positive exactly when `H₂ > H₁`.
///
/// `(μ₁ − sμ₂)² − sμ₁μ₂(c/|ρ| − 2)` with `s = sign ρ`; the exact rule has
/// `c = 2`.
pub fn mean_rule_margin(rho: f64, mu1: f64, mu2: f64, c: f64) -> f64 {
    let s = rho.signum();
    let r = rho.abs();
    (mu1 - s * mu2).powi(2) - s * mu1 * mu2 * (c / r - 2.0)
}

fn rho_grid(cfg: &PropsConfig) -> Result<Vec<f64>> {
    if !(cfg.resolution > 0.0 && cfg.resolution < 1.0) {
        return Err(Error::InvalidConfig(format!("resolution {} outside (0, 1)", cfg.resolution)));
    }
    if !(cfg.boundary_tol >= 0.0) {
        return Err(Error::InvalidConfig("boundary tolerance must be non-negative".into()));
    }
    let mut out = Vec::new();
    let mut k = 1;
    loop {
        let r = k as f64 * cfg.resolution;
        if r >= 1.0 - 1e-9 {
            break;
        }
        out.push(-r);
        out.push(r);
        k += 1;
    }
    for &r in &cfg.extra_rho {
        if !(r.abs() > 0.0 && r.abs() < 1.0) {
            return Err(Error::InvalidConfig(format!("extra correlation {r} outside (−1, 1) \\ {{0}}")));
        }
        out.push(r);
    }
    out.sort_by(f64::total_cmp);
    out.dedup();
    Ok(out)
}

/// `k · step` for `k = 1..` up to `max`.
fn factor_grid(step: f64, max: f64) -> Vec<f64> {
    (1..).map(|k| k as f64 * step).take_while(|&a| a <= max + 1e-9).collect()
}

/// Checks every region rule over the grid.
///
/// Rules: mean changes (sign of [`mean_rule_margin`] with `c = 2`), equal mean
/// shifts in the same direction, both variances scaled equally (`H₂ = H₁`),
/// one variance scaled, and scaled correlation.
pub fn verify_bivariate_propositions(cfg: &PropsConfig) -> Result<PropsReport> {
    let rhos = rho_grid(cfg)?;
    let tol = cfg.boundary_tol;
    let factors = factor_grid(cfg.resolution, FACTOR_MAX);
    let signed_factors: Vec<f64> = factors.iter().rev().map(|a| -a).chain([0.0]).chain(factors.iter().copied()).collect();
    let means: Vec<f64> = (-MEAN_STEPS..=MEAN_STEPS).map(|k| k as f64 * MEAN_STEP).collect();

    let mut mean = PropositionCheck::new("mean", "H2 > H1 iff (mu1 - s mu2)^2 > s mu1 mu2 (2/|rho| - 2), s = sign(rho)");
    let mut same = PropositionCheck::new(
        "mean_equal_same_direction",
        "mu1 = mu2 != 0: H2 < H1 for rho > 0, H2 > H1 for rho < 0",
    );
    let mut two_var = PropositionCheck::new("two_variances", "a11 = a22 = a != 1, a12 = 1: H2 = H1");
    let mut one_var = PropositionCheck::new(
        "one_variance",
        "a > 1: H2 > H1; a < 1: H2 < H1 unless |rho| > sqrt(3)/2 and a < sqrt(4 rho^2 - 3)",
    );
    let mut corr = PropositionCheck::new("correlation", "a12 = a, |a rho| < 1: H2 > H1 for a > -1, H2 < H1 for a < -1");
    let mut alt_disagree = 0;
    let exception_rho = 3f64.sqrt() / 2.0;

    for &rho in &rhos {
        let base = CorrelationMatrix::try_new(DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]))?;
        let es = eigensystem(&base);

        for &mu1 in &means {
            for &mu2 in &means {
                let p = GridPoint { mu1, mu2, ..GridPoint::unchanged(rho) };
                let observed = mean.record(&es, p, sign_rule(mean_rule_margin(rho, mu1, mu2, 2.0), tol))?;
                if let Some(alt) = sign_rule(mean_rule_margin(rho, mu1, mu2, 4.0), tol) {
                    if observed != Ordering::Equal && !observed.matches(alt) {
                        alt_disagree += 1;
                    }
                }
            }
        }
        for &mu in means.iter().filter(|&&m| m != 0.0) {
            let p = GridPoint { mu1: mu, mu2: mu, ..GridPoint::unchanged(rho) };
            let e = if rho > 0.0 { Expected::H2Less } else { Expected::H2Greater };
            same.record(&es, p, Some(e))?;
        }

        for &a in &factors {
            let near_one = (a - 1.0).abs() <= tol;
            let p = GridPoint { a11: a, a22: a, ..GridPoint::unchanged(rho) };
            two_var.record(&es, p, (!near_one).then_some(Expected::Equal))?;

            let r = rho.abs();
            let a0 = (4.0 * rho * rho - 3.0).max(0.0).sqrt();
            let expected = if near_one || (a < 1.0 && ((r - exception_rho).abs() <= tol || (a - a0).abs() <= tol)) {
                None
            } else if a > 1.0 || (r > exception_rho && a < a0) {
                Some(Expected::H2Greater)
            } else {
                Some(Expected::H2Less)
            };
            one_var.record(&es, GridPoint { a11: a, ..GridPoint::unchanged(rho) }, expected)?;
            one_var.record(&es, GridPoint { a22: a, ..GridPoint::unchanged(rho) }, expected)?;
        }

        for &a in &signed_factors {
            if 1.0 - (a * rho).abs() <= tol {
                corr.outside_domain += 1;
                continue;
            }
            let expected = if (a - 1.0).abs() <= tol || (a + 1.0).abs() <= tol {
                None
            } else if a > -1.0 {
                Some(Expected::H2Greater)
            } else {
                Some(Expected::H2Less)
            };
            corr.record(&es, GridPoint { a12: a, ..GridPoint::unchanged(rho) }, expected)?;
        }
    }

    let checks = vec![mean, same, two_var, one_var, corr];
    Ok(PropsReport {
        config: cfg.clone(),
        rho_grid: rhos,
        total_checked: checks.iter().map(|c| c.checked).sum(),
        total_violations: checks.iter().map(|c| c.violations.len()).sum(),
        checks,
        mean_rule_4_over_rho_disagreements: alt_disagree,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sensitivities(p: GridPoint) -> (f64, f64) {
        let base = CorrelationMatrix::try_new(DMatrix::from_row_slice(2, 2, &[1.0, p.rho, p.rho, 1.0])).unwrap();
        let h = projection_sensitivities(&eigensystem(&base), &p.post()).unwrap();
        (h[0], h[1])
    }

    /// Direct closed form: `H² = 1 − exp(−m²/(8σ²))` along each axis.
    #[test]
    fn mean_rule_against_closed_form() {
        for &(rho, mu1, mu2) in &[(0.5, 1.0, 0.25), (0.5, 1.0, -0.4), (-0.3, 0.7, 0.2), (0.9, 1.0, 0.6)] {
            let r: f64 = rho;
            let (top, bottom) = if rho > 0.0 { (mu1 + mu2, mu1 - mu2) } else { (mu1 - mu2, mu1 + mu2) };
            let h1 = (1.0 - (-(top * top / 2.0) / (8.0 * (1.0 + r.abs()))).exp()).sqrt();
            let h2 = (1.0 - (-(bottom * bottom / 2.0) / (8.0 * (1.0 - r.abs()))).exp()).sqrt();
            let (g1, g2) = sensitivities(GridPoint { mu1, mu2, ..GridPoint::unchanged(rho) });
            assert!((g1 - h1).abs() < 1e-12 && (g2 - h2).abs() < 1e-12);
            assert_eq!(h2 > h1, mean_rule_margin(rho, mu1, mu2, 2.0) > 0.0, "{rho} {mu1} {mu2}");
        }
    }

    #[test]
    fn one_mean_changes() {
        let (h1, h2) = sensitivities(GridPoint { mu1: 1.0, ..GridPoint::unchanged(0.5) });
        assert!(h2 > h1);
    }

    #[test]
    fn equal_variance_changes_tie() {
        for rho in [-0.8, 0.1, 0.6] {
            let (h1, h2) = sensitivities(GridPoint { a11: 1.7, a22: 1.7, ..GridPoint::unchanged(rho) });
            assert!((h2 - h1).abs() < 1e-12);
        }
    }

    #[test]
    fn one_variance_exception() {
        let (h1, h2) = sensitivities(GridPoint { a22: 0.5, ..GridPoint::unchanged(0.95) });
        assert!(h2 > h1);
        let (h1, h2) = sensitivities(GridPoint { a22: 0.5, ..GridPoint::unchanged(0.3) });
        assert!(h2 < h1);
    }

    #[test]
    fn correlation_scaling() {
        let (h1, h2) = sensitivities(GridPoint { a12: 0.25, ..GridPoint::unchanged(0.6) });
        assert!(h2 > h1);
        let (h1, h2) = sensitivities(GridPoint { a12: -1.5, ..GridPoint::unchanged(0.6) });
        assert!(h2 < h1);
    }

    #[test]
    fn default_grid_has_no_violations() {
        let rep = verify_bivariate_propositions(&PropsConfig::default()).unwrap();
        assert_eq!(rep.rho_grid.len(), 38);
        for c in &rep.checks {
            assert!(c.checked > 0, "{}", c.name);
            assert!(c.violations.is_empty(), "{}: {:?}", c.name, &c.violations[..c.violations.len().min(3)]);
        }
        assert!(rep.mean_rule_4_over_rho_disagreements > 0);
    }

    #[test]
    fn exception_boundary_is_excluded() {
        let cfg = PropsConfig {
            extra_rho: vec![3f64.sqrt() / 2.0],
            ..PropsConfig::default()
        };
        let rep = verify_bivariate_propositions(&cfg).unwrap();
        let one = rep.checks.iter().find(|c| c.name == "one_variance").unwrap();
        assert!(one
            .excluded_points
            .iter()
            .any(|p| (p.rho - 3f64.sqrt() / 2.0).abs() < 1e-15 && p.a22 < 1.0));
        assert_eq!(rep.total_violations, 0);
    }

    #[test]
    fn rejects_bad_resolution() {
        let cfg = PropsConfig { resolution: 0.0, ..PropsConfig::default() };
        assert!(verify_bivariate_propositions(&cfg).is_err());
    }
}
