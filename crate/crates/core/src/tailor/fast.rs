use nalgebra::DMatrix;

use crate::changemodel::{
    apply_change, hellinger_normal, projection_sensitivities, ChangeScenario, ChangeType, NormalParams,
};
use crate::corrcore::{CorrelationMatrix, EigenSystem};
use crate::error::{Error, Result};

/// Projection sensitivities for many sparse changes against one base.
///
/// Every change touches only the rows and columns of its affected streams, so
/// the projected post-change means and variances are low-rank updates of the
/// pre-change ones. Correlation changes fall back to the dense route whenever
/// positive-definite repair would alter the scaled matrix.
pub(crate) struct SensitivityEngine<'a> {
    base: &'a CorrelationMatrix,
    es: &'a EigenSystem,
    pd_floor: f64,
    /// `(Σ₀ − εI)⁻¹`.
    shifted_inverse: DMatrix<f64>,
}

impl<'a> SensitivityEngine<'a> {
    pub fn new(base: &'a CorrelationMatrix, es: &'a EigenSystem, pd_floor: f64) -> Result<Self> {
        let d = es.dim();
        for j in 0..d {
            if !(es.values[j] > pd_floor) {
                return Err(Error::ZeroEigenvalue {
                    axis: j,
                    value: es.values[j],
                });
            }
        }
        let inv_vals: Vec<f64> = es.values.iter().map(|l| 1.0 / (l - pd_floor)).collect();
        let scaled = DMatrix::from_fn(d, d, |i, j| es.vectors[(i, j)] * inv_vals[j]);
        Ok(Self {
            base,
            es,
            pd_floor,
            shifted_inverse: &scaled * es.vectors.transpose(),
        })
    }

    pub fn sensitivities(&self, sc: &ChangeScenario, out: &mut Vec<f64>) -> Result<()> {
        let d = self.es.dim();
        if let Some(&bad) = sc.affected.iter().find(|&&i| i >= d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: bad + 1,
            });
        }
        out.clear();
        let v = &self.es.vectors;
        let lambda = &self.es.values;
        match sc.ctype {
            ChangeType::Mean => {
                for j in 0..d {
                    let shift: f64 = sc
                        .affected
                        .iter()
                        .zip(&sc.mean_sizes)
                        .map(|(&i, mu)| v[(i, j)] * mu)
                        .sum();
                    let sd = lambda[j].sqrt();
                    out.push(hellinger_normal(NormalParams::new(0.0, sd), NormalParams::new(shift, sd)));
                }
            }
            ChangeType::Variance => {
                // vᵀCΣCv with C = I + E: λ + 2λ·vᵀEv + (Ev)ᵀΣ(Ev)
                let e: Vec<f64> = sc.sdev_factors.iter().map(|s| s - 1.0).collect();
                let mut ev = vec![0.0; sc.affected.len()];
                for j in 0..d {
                    for (slot, (&i, ei)) in ev.iter_mut().zip(sc.affected.iter().zip(&e)) {
                        *slot = ei * v[(i, j)];
                    }
                    let mut quad = 0.0;
                    let mut cross = 0.0;
                    for (a, &i) in sc.affected.iter().enumerate() {
                        cross += ev[a] * v[(i, j)];
                        let mut row = 0.0;
                        for (b, &k) in sc.affected.iter().enumerate() {
                            row += self.base.get(i, k) * ev[b];
                        }
                        quad += ev[a] * row;
                    }
                    let var = lambda[j] + 2.0 * lambda[j] * cross + quad;
                    out.push(self.hellinger_var(lambda[j], var));
                }
            }
            ChangeType::Correlation => {
                if !self.scaled_is_feasible(sc) {
                    let post = apply_change(self.base, sc, self.pd_floor)?;
                    *out = projection_sensitivities(self.es, &post)?;
                    return Ok(());
                }
                let deltas: Vec<(usize, usize, f64)> = sc
                    .corr_factors
                    .iter()
                    .map(|&(i, k, a)| {
                        let r = self.base.get(i, k);
                        (i, k, a * r - r)
                    })
                    .collect();
                for j in 0..d {
                    let change: f64 = deltas.iter().map(|&(i, k, dl)| dl * v[(i, j)] * v[(k, j)]).sum();
                    out.push(self.hellinger_var(lambda[j], lambda[j] + 2.0 * change));
                }
            }
        }
        Ok(())
    }

    fn hellinger_var(&self, lambda: f64, var: f64) -> f64 {
        hellinger_normal(
            NormalParams::new(0.0, lambda.sqrt()),
            NormalParams::new(0.0, var.max(f64::MIN_POSITIVE).sqrt()),
        )
    }

    /// Whether `Σ₀ + Δ` already has every eigenvalue at least the floor.
    ///
    /// With `Δ` confined to the affected block `U`, `Σ₀ + Δ − εI` is positive
    /// definite iff its Schur complement `M⁻¹ + Δ_UU` is, where
    /// `M = ((Σ₀ − εI)⁻¹)_UU`. With `M = LLᵀ` that is `I + LᵀΔ_UU L`.
    fn scaled_is_feasible(&self, sc: &ChangeScenario) -> bool {
        let inv = &self.shifted_inverse;
        if sc
            .corr_factors
            .iter()
            .any(|&(i, k, a)| !((a * self.base.get(i, k)).abs() < 1.0))
        {
            return false;
        }
        let u = &sc.affected;
        let n = u.len();
        let pos = |i: usize| u.binary_search(&i).ok();
        let m = DMatrix::from_fn(n, n, |a, b| inv[(u[a], u[b])]);
        let Some(chol) = m.cholesky() else {
            return false;
        };
        let l = chol.l();
        let mut delta = DMatrix::<f64>::zeros(n, n);
        for &(i, k, a) in &sc.corr_factors {
            let (Some(pi), Some(pk)) = (pos(i), pos(k)) else {
                return false;
            };
            let r = self.base.get(i, k);
            delta[(pi, pk)] = a * r - r;
            delta[(pk, pi)] = a * r - r;
        }
        let mut inner = l.transpose() * delta * &l;
        for a in 0..n {
            inner[(a, a)] += 1.0;
        }
        inner.cholesky().is_some()
    }
}

#[cfg(test)]
fn dense_sensitivities(
    base: &CorrelationMatrix,
    es: &EigenSystem,
    sc: &ChangeScenario,
    pd_floor: f64,
) -> Result<Vec<f64>> {
    let post = apply_change(base, sc, pd_floor)?;
    projection_sensitivities(es, &post)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::changemodel::{sample_change_lagged, ChangeDistributionSpec};
    use crate::corrcore::{eigensystem, random_correlation, DEFAULT_PD_FLOOR};
    use crate::rng::seeded;

    fn agree(base: &CorrelationMatrix, spec: &ChangeDistributionSpec, lag: usize, draws: usize, seed: u64) {
        let es = eigensystem(base);
        let engine = SensitivityEngine::new(base, &es, DEFAULT_PD_FLOOR).unwrap();
        let mut rng = seeded(seed);
        let mut fast = Vec::new();
        for _ in 0..draws {
            let sc = sample_change_lagged(spec, base, lag, &mut rng).unwrap();
            engine.sensitivities(&sc, &mut fast).unwrap();
            let dense = dense_sensitivities(base, &es, &sc, DEFAULT_PD_FLOOR).unwrap();
            for (a, b) in fast.iter().zip(dense.iter()) {
                assert!((a - b).abs() < 1e-9, "{:?}: fast {a} dense {b}", sc.ctype);
            }
        }
    }

    #[test]
    fn fast_matches_dense_all_types() {
        let mut rng = seeded(21);
        for alpha in [0.1, 1.0, 20.0] {
            let base = random_correlation(12, alpha, &mut rng).unwrap();
            agree(&base, &ChangeDistributionSpec::default(), 0, 300, 22);
        }
    }

    #[test]
    fn fast_matches_dense_with_repair() {
        // strong correlations shrunk unevenly often leave the PD cone
        let base = random_correlation(10, 0.05, &mut seeded(31)).unwrap();
        agree(
            &base,
            &ChangeDistributionSpec::only(ChangeType::Correlation),
            0,
            300,
            32,
        );
    }

    #[test]
    fn fast_matches_dense_lagged() {
        let base = random_correlation(12, 0.5, &mut seeded(41)).unwrap();
        agree(&base, &ChangeDistributionSpec::default(), 2, 200, 42);
    }
}
