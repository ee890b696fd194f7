//! Mixture likelihood-ratio monitoring of projected or raw data streams.
//!
//! Training occupies times `−m+1..0` and monitoring starts at `t = 1`. With a
//! lag `l > 0` the first `l` raw observations only fill the lag history; `t`
//! counts monitored (lag-extended) observations.

mod monitor;
mod stats;

pub use monitor::{run_monitor, Monitor, MonitorConfig, RunOutcome, StepResult, DEFAULT_WINDOW};
pub use stats::{
    bartlett_correction, mixture_statistic, mixture_term, stream_llr, Segment, VAR_FLOOR,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::corrcore::{estimate_training, eigensystem, EigenSystem, TrainingSummary, PD_TOL};
use crate::error::{Error, Result};
use crate::matrix_serde;

/// Which streams are monitored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// The standardized raw streams.
    Identity,
    /// Standardized projections onto these principal axes (0-based).
    Axes(Vec<usize>),
}

/// Frozen training-time quantities of one monitored stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamTraining {
    pub n: usize,
    pub mean: f64,
    pub m2: f64,
}

impl StreamTraining {
    fn from_values(values: impl Iterator<Item = f64>) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let delta = v - mean;
            mean += delta / n as f64;
            m2 += delta * (v - mean);
        }
        Self { n, mean, m2 }
    }
}

/// Everything the monitor needs from the training phase.
///
/// Dimensions refer to lag-extended vectors when `lag > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorModel {
    pub raw_dim: usize,
    pub lag: usize,
    pub projection: Projection,
    #[serde(with = "matrix_serde::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "matrix_serde::vector")]
    pub sdev: DVector<f64>,
    /// Row `j` maps a standardized observation to stream `j`; absent for the
    /// identity projection.
    #[serde(default, with = "opt_rows", skip_serializing_if = "Option::is_none")]
    pub weights: Option<DMatrix<f64>>,
    pub streams: Vec<StreamTraining>,
}

mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::matrix_serde::{from_rows, to_rows};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(to_rows).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<Vec<Vec<f64>>>::deserialize(d)?
            .map(|rows| from_rows(&rows).map_err(serde::de::Error::custom))
            .transpose()
    }
}

impl MonitorModel {
    /// Fits a model to raw training rows (`m × D`).
    ///
    /// Lag-extends the rows, estimates mean, scale and correlation, and for
    /// [`Projection::Axes`] uses the eigensystem of the estimated correlation.
    pub fn fit(training: &DMatrix<f64>, projection: &Projection, lag: usize) -> Result<Self> {
        let raw_dim = training.ncols();
        let ext = lag_extend_rows(training, lag)?;
        let summary = estimate_training(&ext)?;
        let es = match projection {
            Projection::Identity => None,
            Projection::Axes(_) => Some(eigensystem(&summary.corr)),
        };
        Self::from_parts(raw_dim, lag, &ext, &summary, es.as_ref(), projection)
    }

    /// Builds a model from an already estimated training summary.
    ///
    /// `extended` holds the (lag-extended) training rows the summary was
    /// estimated from; `es` must be given for [`Projection::Axes`].
    pub fn from_parts(
        raw_dim: usize,
        lag: usize,
        extended: &DMatrix<f64>,
        summary: &TrainingSummary,
        es: Option<&EigenSystem>,
        projection: &Projection,
    ) -> Result<Self> {
        let dim = summary.dim();
        if dim != raw_dim * (lag + 1) || extended.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: raw_dim * (lag + 1),
                found: extended.ncols(),
            });
        }
        let weights = match projection {
            Projection::Identity => None,
            Projection::Axes(idx) => {
                let es = es.ok_or_else(|| {
                    Error::InvalidConfig("an eigensystem is required for projected monitoring".into())
                })?;
                if es.dim() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: es.dim(),
                    });
                }
                if idx.is_empty() {
                    return Err(Error::InvalidConfig("at least one axis is required".into()));
                }
                let mut w = DMatrix::zeros(idx.len(), dim);
                for (r, &j) in idx.iter().enumerate() {
                    if j >= dim {
                        return Err(Error::InvalidConfig(format!(
                            "axis {j} out of range for dimension {dim}"
                        )));
                    }
                    let lambda = es.values[j];
                    if !(lambda > PD_TOL) {
                        return Err(Error::ZeroEigenvalue {
                            axis: j,
                            value: lambda,
                        });
                    }
                    let scale = lambda.sqrt();
                    for c in 0..dim {
                        w[(r, c)] = es.vectors[(c, j)] / scale;
                    }
                }
                Some(w)
            }
        };
        let mut model = Self {
            raw_dim,
            lag,
            projection: projection.clone(),
            mean: summary.mean.clone(),
            sdev: summary.sdev.clone(),
            weights,
            streams: Vec::new(),
        };
        let z = model.training_projections(extended)?;
        model.streams = (0..z.ncols())
            .map(|j| StreamTraining::from_values(z.column(j).iter().copied()))
            .collect();
        Ok(model)
    }

    /// Dimension of the (lag-extended) observations the model projects.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Number of monitored streams.
    pub fn num_streams(&self) -> usize {
        match &self.weights {
            Some(w) => w.nrows(),
            None => self.dim(),
        }
    }

    /// Number of training observations behind the stream statistics.
    pub fn training_len(&self) -> usize {
        self.streams.first().map_or(0, |s| s.n)
    }

    /// Standardized projections `z_j = v_jᵀ S₀⁻¹ (x − μ̂₀) / √λ_j` of one
    /// (lag-extended) observation.
    pub fn project_observation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.num_streams());
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    pub(crate) fn project_into(&self, x: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let d = self.dim();
        if x.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: x.len(),
            });
        }
        out.clear();
        match &self.weights {
            None => out.extend((0..d).map(|i| (x[i] - self.mean[i]) / self.sdev[i])),
            Some(w) => {
                let std: Vec<f64> = (0..d).map(|i| (x[i] - self.mean[i]) / self.sdev[i]).collect();
                for r in 0..w.nrows() {
                    let mut s = 0.0;
                    for (c, v) in std.iter().enumerate() {
                        s += w[(r, c)] * v;
                    }
                    out.push(s);
                }
            }
        }
        Ok(())
    }

    /// Projections of every row of `rows` (`m × dim`), one column per stream.
    pub fn training_projections(&self, rows: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut z = DMatrix::zeros(rows.nrows(), self.num_streams());
        let mut buf = Vec::new();
        let mut x = vec![0.0; rows.ncols()];
        for r in 0..rows.nrows() {
            for (c, v) in x.iter_mut().enumerate() {
                *v = rows[(r, c)];
            }
            self.project_into(&x, &mut buf)?;
            for (c, v) in buf.iter().enumerate() {
                z[(r, c)] = *v;
            }
        }
        Ok(z)
    }
}

/// Concatenates the last `lag + 1` raw observations, oldest first.
pub fn lag_extend(history: &[Vec<f64>], lag: usize) -> Result<Vec<f64>> {
    if history.len() < lag + 1 {
        return Err(Error::InsufficientHistory {
            needed: lag + 1,
            available: history.len(),
        });
    }
    Ok(history[history.len() - lag - 1..].iter().flatten().copied().collect())
}

/// Lag-extends every row of `data` (`m × D`), giving `(m − lag) × D(lag + 1)`.
pub fn lag_extend_rows(data: &DMatrix<f64>, lag: usize) -> Result<DMatrix<f64>> {
    let (m, d) = data.shape();
    if m < lag + 1 {
        return Err(Error::InsufficientHistory {
            needed: lag + 1,
            available: m,
        });
    }
    if lag == 0 {
        return Ok(data.clone());
    }
    Ok(DMatrix::from_fn(m - lag, d * (lag + 1), |r, c| {
        let block = c / d;
        data[(r + block, c % d)]
    }))
}
