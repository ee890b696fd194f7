use nalgebra::DMatrix;

use super::{check_symmetric, min_eigenvalue, symmetrize, CorrelationMatrix, PD_TOL};
use crate::error::{Error, Result};

/// Default eigenvalue floor for positive-definite repair and eigenvalue guards.
pub const DEFAULT_PD_FLOOR: f64 = 1e-8;

const MAX_ITER: usize = 100;

/// Clipping target, slightly above the floor so that the diagonal rescaling
/// that follows does not push the smallest eigenvalue back under it.
const CLIP_MARGIN: f64 = 1.01;

/// Repairs a symmetric matrix into a correlation matrix whose smallest
/// eigenvalue is at least `eps`.
///
/// Alternates eigenvalue clipping with rescaling to unit diagonal until both
/// hold. Inputs that already satisfy every correlation invariant with smallest
/// eigenvalue `>= eps` come back unchanged.
pub fn nearest_pd_correlation(sym: &DMatrix<f64>, eps: f64) -> Result<CorrelationMatrix> {
    if !(eps > PD_TOL && eps < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "eigenvalue floor must lie in ({PD_TOL:e}, 1), got {eps}"
        )));
    }
    let mut a = check_symmetric(sym.clone())?;
    for _ in 0..=MAX_ITER {
        if is_feasible(&a, eps) {
            return Ok(CorrelationMatrix::new_unchecked(a));
        }
        a = clip_and_rescale(&a, eps * CLIP_MARGIN);
    }
    Err(Error::NoConvergence {
        iterations: MAX_ITER,
    })
}

fn is_feasible(a: &DMatrix<f64>, eps: f64) -> bool {
    let d = a.nrows();
    for i in 0..d {
        if a[(i, i)] != 1.0 {
            return false;
        }
        for j in 0..i {
            let r = a[(i, j)];
            if !(r > -1.0 && r < 1.0) {
                return false;
            }
        }
    }
    min_eigenvalue(a) >= eps
}

fn clip_and_rescale(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let d = a.nrows();
    let eig = a.clone().symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    let scaled = DMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, j)] * vals[j]);
    let b = symmetrize(&scaled * eig.eigenvectors.transpose());
    let inv_sd: Vec<f64> = (0..d).map(|i| 1.0 / b[(i, i)].sqrt()).collect();
    DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            b[(i, j)] * inv_sd[i] * inv_sd[j]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrcore::random_correlation;
    use crate::rng::seeded;

    #[test]
    fn feasible_input_unchanged() {
        let c = random_correlation(6, 1.0, &mut seeded(1)).unwrap();
        let out = nearest_pd_correlation(c.matrix(), DEFAULT_PD_FLOOR).unwrap();
        assert!((out.matrix() - c.matrix()).amax() <= 1e-12);
    }

    #[test]
    fn indefinite_two_by_two() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.2, 1.2, 1.0]);
        let out = nearest_pd_correlation(&m, DEFAULT_PD_FLOOR).unwrap();
        let r = out.get(0, 1);
        assert!(r < 1.0 && r > 1.0 - 1e-6, "{r}");
        assert!(min_eigenvalue(out.matrix()) >= DEFAULT_PD_FLOOR);
    }

    #[test]
    fn zero_matrix_becomes_identity() {
        let out = nearest_pd_correlation(&DMatrix::zeros(3, 3), DEFAULT_PD_FLOOR).unwrap();
        assert!((out.matrix() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-12);
        let out = nearest_pd_correlation(&DMatrix::identity(3, 3), DEFAULT_PD_FLOOR).unwrap();
        assert_eq!(out.matrix(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn asymmetric_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.3, 1.0]);
        assert!(nearest_pd_correlation(&m, DEFAULT_PD_FLOOR).is_err());
    }
}
