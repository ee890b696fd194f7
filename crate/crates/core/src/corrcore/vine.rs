use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::{min_eigenvalue, nearest_pd_correlation, CorrelationMatrix, DEFAULT_PD_FLOOR};
use crate::error::{Error, Result};

/// Partial correlations are kept this far inside (-1, 1); Beta draws with tiny
/// shape parameters otherwise round to ±1 in double precision.
const PARTIAL_BOUND: f64 = 1.0 - 1e-7;

/// Random correlation matrix from the D-vine partial-correlation construction.
///
/// The partial correlation of `(i, i + k)` given the variables between them is
/// drawn from `Beta(β_k, β_k)` rescaled to `(-1, 1)` with
/// `β_k = alpha_d + (D − 1 − k) / 2`, giving a density proportional to
/// `det(R)^(alpha_d − 1)`. `alpha_d = 1` is uniform over correlation matrices;
/// smaller values favour large correlations. Draws whose smallest eigenvalue
/// falls below the default floor are repaired to it.
pub fn random_correlation<R: Rng + ?Sized>(
    dim: usize,
    alpha_d: f64,
    rng: &mut R,
) -> Result<CorrelationMatrix> {
    if dim < 1 {
        return Err(Error::InvalidConfig("dimension must be positive".into()));
    }
    if !(alpha_d > 0.0 && alpha_d.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "alpha_d must be positive, got {alpha_d}"
        )));
    }
    let betas: Vec<Beta<f64>> = (1..dim)
        .map(|k| {
            let shape = alpha_d + (dim - 1 - k) as f64 / 2.0;
            Beta::new(shape, shape).map_err(|e| Error::InvalidConfig(e.to_string()))
        })
        .collect::<Result<_>>()?;

    let mut r = DMatrix::<f64>::identity(dim, dim);
    // For a fixed row i, pair (i, j) needs the block R[i+1..j, i+1..j]. Those
    // blocks are nested as j grows, so their Cholesky factor is extended one row
    // at a time instead of refactored.
    for i in (0..dim.saturating_sub(1)).rev() {
        let mut chol_rows: Vec<Vec<f64>> = Vec::with_capacity(dim - i);
        let mut chol_diag: Vec<f64> = Vec::with_capacity(dim - i);
        // L⁻¹ R[i, i+1..j]
        let mut y_row: Vec<f64> = Vec::with_capacity(dim - i);
        for j in (i + 1)..dim {
            let k = j - i;
            let partial = (2.0 * betas[k - 1].sample(rng) - 1.0).clamp(-PARTIAL_BOUND, PARTIAL_BOUND);
            // L⁻¹ R[j, i+1..j]
            let mut y_col = Vec::with_capacity(k - 1);
            for a in 0..(k - 1) {
                let mut s = r[(j, i + 1 + a)];
                for (b, yb) in y_col.iter().enumerate() {
                    s -= chol_rows[a][b] * yb;
                }
                y_col.push(s / chol_diag[a]);
            }
            let cross: f64 = y_row.iter().zip(&y_col).map(|(a, b)| a * b).sum();
            let resid_i = (1.0 - y_row.iter().map(|v| v * v).sum::<f64>()).max(0.0);
            let resid_j = (1.0 - y_col.iter().map(|v| v * v).sum::<f64>()).max(0.0);
            let rho = (cross + partial * (resid_i * resid_j).sqrt()).clamp(-1.0, 1.0);
            r[(i, j)] = rho;
            r[(j, i)] = rho;

            let diag = resid_j.sqrt();
            let y_next = (rho - y_col.iter().zip(&y_row).map(|(a, b)| a * b).sum::<f64>()) / diag;
            chol_rows.push(y_col);
            chol_diag.push(diag);
            y_row.push(y_next);
        }
    }
    // Very small alpha_d drives partial correlations to the clamp and the
    // product of (1 − ρ²) terms underflows the eigen-solver's precision.
    if min_eigenvalue(&r) < DEFAULT_PD_FLOOR {
        return nearest_pd_correlation(&r, DEFAULT_PD_FLOOR);
    }
    CorrelationMatrix::try_new(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn mean_abs_offdiag(c: &CorrelationMatrix) -> f64 {
        let d = c.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..i {
                s += c.get(i, j).abs();
            }
        }
        s / (d * (d - 1) / 2) as f64
    }

    #[test]
    fn two_by_two_always_valid() {
        let mut rng = seeded(7);
        for alpha in [0.05, 1.0, 50.0] {
            for _ in 0..200 {
                let c = random_correlation(2, alpha, &mut rng).unwrap();
                assert!(c.get(0, 1).abs() < 1.0);
            }
        }
    }

    #[test]
    fn seed_determinism() {
        let a = random_correlation(8, 0.7, &mut seeded(11)).unwrap();
        let b = random_correlation(8, 0.7, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_alpha_gives_larger_correlations() {
        let mut rng = seeded(3);
        let avg = |alpha: f64, rng: &mut crate::rng::TaskRng| -> f64 {
            (0..200)
                .map(|_| mean_abs_offdiag(&random_correlation(20, alpha, rng).unwrap()))
                .sum::<f64>()
                / 200.0
        };
        let high = avg(50.0, &mut rng);
        let low = avg(0.05, &mut rng);
        assert!(high < low, "alpha 50: {high}, alpha 0.05: {low}");
    }

    #[test]
    fn uniform_two_by_two_marginal() {
        // alpha_d = 1 in two dimensions gives rho ~ Unif(-1, 1)
        let mut rng = seeded(5);
        let n = 20_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| random_correlation(2, 1.0, &mut rng).unwrap().get(0, 1))
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0 / 3.0).abs() < 0.02);
    }

    #[test]
    fn three_dim_uniform_marginals_match_beta() {
        // Uniform over 3x3 correlation matrices has every rho_ij ~ Beta(1.5, 1.5)
        // on (-1, 1), variance 1/4.
        let mut rng = seeded(9);
        let n = 20_000;
        let mut var = [0.0; 3];
        for _ in 0..n {
            let c = random_correlation(3, 1.0, &mut rng).unwrap();
            var[0] += c.get(0, 1).powi(2);
            var[1] += c.get(0, 2).powi(2);
            var[2] += c.get(1, 2).powi(2);
        }
        for v in var {
            assert!((v / n as f64 - 0.25).abs() < 0.015, "{}", v / n as f64);
        }
    }
}
