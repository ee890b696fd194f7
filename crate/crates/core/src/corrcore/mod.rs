//! Correlation and eigen linear algebra shared by tailoring and monitoring.
//!
//! Correlations use the maximum-likelihood divisor `m` (not `m - 1`) so that
//! they agree with the segment variances of the monitoring statistic: the
//! eigenvalue of a training correlation matrix is exactly the sample variance of
//! the matching standardized projection over the training set.

mod nearpd;
mod vine;

pub use nearpd::{nearest_pd_correlation, DEFAULT_PD_FLOOR};
pub use vine::random_correlation;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_serde;

/// Symmetry tolerance for correlation matrices.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Smallest eigenvalue a matrix must exceed to count as positive definite.
/// Perfectly collinear data land around 1e-16 and are rejected.
pub const PD_TOL: f64 = 1e-12;

/// Symmetric positive-definite matrix with unit diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct CorrelationMatrix(DMatrix<f64>);

impl CorrelationMatrix {
    /// Validates `m` against every correlation-matrix invariant.
    ///
    /// The input is symmetrized (averaging mirrored entries) once it passes the
    /// symmetry tolerance, so the stored matrix is exactly symmetric.
    pub fn try_new(m: DMatrix<f64>) -> Result<Self> {
        let m = check_symmetric(m)?;
        let d = m.nrows();
        for i in 0..d {
            if m[(i, i)] != 1.0 {
                return Err(Error::DegenerateCorrelation(format!(
                    "diagonal entry {i} is {}, expected 1",
                    m[(i, i)]
                )));
            }
            for j in 0..i {
                let r = m[(i, j)];
                if !(r > -1.0 && r < 1.0) {
                    return Err(Error::DegenerateCorrelation(format!(
                        "entry ({i}, {j}) = {r} outside (-1, 1)"
                    )));
                }
            }
        }
        let min = min_eigenvalue(&m);
        if !(min > PD_TOL) {
            return Err(Error::DegenerateCorrelation(format!(
                "smallest eigenvalue {min:e} is not positive"
            )));
        }
        Ok(Self(m))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    /// Equicorrelation matrix with common off-diagonal `rho`.
    pub fn equicorrelation(dim: usize, rho: f64) -> Result<Self> {
        Self::try_new(DMatrix::from_fn(dim, dim, |i, j| if i == j { 1.0 } else { rho }))
    }

    pub(crate) fn new_unchecked(m: DMatrix<f64>) -> Self {
        Self(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

impl TryFrom<Vec<Vec<f64>>> for CorrelationMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = matrix_serde::from_rows(&rows).map_err(Error::DegenerateCorrelation)?;
        Self::try_new(m)
    }
}

impl From<CorrelationMatrix> for Vec<Vec<f64>> {
    fn from(c: CorrelationMatrix) -> Self {
        matrix_serde::to_rows(&c.0)
    }
}

pub(crate) fn check_symmetric(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DegenerateCorrelation(format!(
            "matrix is {}x{}, not square",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateCorrelation("non-finite entry".into()));
    }
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::DegenerateCorrelation(format!(
                    "asymmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(symmetrize(m))
}

pub(crate) fn symmetrize(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    m.clone().symmetric_eigenvalues().min()
}

/// Eigenpairs of a correlation matrix sorted by non-increasing eigenvalue.
///
/// Column `j` of `vectors` is the axis for `values[j]`; axis 0 is the most
/// varying and axis `D - 1` the least varying. Each column is oriented so its
/// largest-magnitude entry is positive, with near-ties (relative 1e-12) going
/// to the lowest index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSystem {
    #[serde(with = "matrix_serde::vector")]
    pub values: DVector<f64>,
    #[serde(with = "matrix_serde::rows")]
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn vector(&self, j: usize) -> DVector<f64> {
        self.vectors.column(j).into_owned()
    }

    /// `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        &scaled * self.vectors.transpose()
    }
}

/// Sorted, sign-normalized eigensystem of a correlation matrix.
pub fn eigensystem(corr: &CorrelationMatrix) -> EigenSystem {
    symmetric_eigensystem(corr.matrix())
}

pub(crate) fn symmetric_eigensystem(m: &DMatrix<f64>) -> EigenSystem {
    let d = m.nrows();
    let SymmetricEigen {
        eigenvalues,
        eigenvectors,
    } = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigenvalues[b].total_cmp(&eigenvalues[a]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &src) in order.iter().enumerate() {
        let mut v = eigenvectors.column(src).into_owned();
        orient(&mut v);
        vectors.set_column(col, &v);
    }
    EigenSystem { values, vectors }
}

fn orient(v: &mut DVector<f64>) {
    let largest = v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()));
    let tol = largest * 1e-12;
    if let Some(pivot) = v.iter().position(|x| x.abs() >= largest - tol) {
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
    }
}

/// Training-phase summary: column means, standard deviations and correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    #[serde(with = "matrix_serde::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "matrix_serde::vector")]
    pub sdev: DVector<f64>,
    pub corr: CorrelationMatrix,
    pub m: usize,
}

impl TrainingSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `S₀⁻¹ (x − μ̂₀)`.
    pub fn standardize(&self, x: &[f64]) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.mean.iter().zip(self.sdev.iter()))
                .map(|(v, (mu, sd))| (v - mu) / sd),
        ))
    }

    /// Covariance `S₀ Σ̂₀ S₀` on the data scale.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| self.sdev[i] * self.corr.get(i, j) * self.sdev[j])
    }
}

/// Mean, standard deviation (divisor `m`) and Pearson correlation of the
/// columns of an `m × D` data matrix.
pub fn estimate_training(data: &DMatrix<f64>) -> Result<TrainingSummary> {
    let (m, d) = data.shape();
    if m < 2 {
        return Err(Error::InvalidConfig(format!(
            "training needs at least 2 rows, got {m}"
        )));
    }
    if d == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig("training data has non-finite values".into()));
    }
    let n = m as f64;
    let mean = DVector::from_iterator(d, data.column_iter().map(|c| c.sum() / n));
    let mut centered = data.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mean[j]);
    }
    let cov = centered.tr_mul(&centered) / n;
    let sdev = DVector::from_iterator(d, (0..d).map(|j| cov[(j, j)].sqrt()));
    if let Some(j) = (0..d).find(|&j| !(sdev[j] > 0.0)) {
        return Err(Error::ConstantColumn(j));
    }
    let corr = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            1.0
        } else {
            (cov[(i, j)] / (sdev[i] * sdev[j])).clamp(-1.0, 1.0)
        }
    });
    let corr = CorrelationMatrix::try_new(corr)?;
    Ok(TrainingSummary {
        mean,
        sdev,
        corr,
        m,
    })
}

/// Asymptotic covariance of the sample eigenvector for axis `j`,
/// `(λ_j / n) Σ_{l≠j} λ_l / (λ_j − λ_l)² · v_j v_jᵀ`.
///
/// Requires pairwise distinct eigenvalues (gaps above 1e-10).
pub fn eigvec_asymptotic_cov(es: &EigenSystem, j: usize, n: usize) -> Result<DMatrix<f64>> {
    let d = es.dim();
    if j >= d {
        return Err(Error::InvalidConfig(format!("axis {j} out of range for dimension {d}")));
    }
    if n == 0 {
        return Err(Error::InvalidConfig("sample count must be positive".into()));
    }
    for a in 1..d {
        let gap = es.values[a - 1] - es.values[a];
        if !(gap.abs() > 1e-10) {
            return Err(Error::DegenerateSpectrum {
                first: a - 1,
                second: a,
                gap,
            });
        }
    }
    let lj = es.values[j];
    let factor: f64 = (0..d)
        .filter(|&l| l != j)
        .map(|l| es.values[l] / (lj - es.values[l]).powi(2))
        .sum::<f64>()
        * lj
        / n as f64;
    let v = es.vector(j);
    Ok(&v * v.transpose() * factor)
}
