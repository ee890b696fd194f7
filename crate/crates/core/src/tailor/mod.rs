//! Ranking principal axes by how often they are the most change-sensitive
//! projection, and picking the smallest set covering a probability cutoff.

mod fast;

use rayon::prelude::*;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::changemodel::{sample_change_lagged, ChangeDistributionSpec, ChangeType};
use crate::corrcore::{eigensystem, CorrelationMatrix, EigenSystem, DEFAULT_PD_FLOOR};
use crate::error::{Error, Result};
use crate::rng::{master_seed, task_rng};
use fast::SensitivityEngine;

/// Default number of Monte Carlo change draws.
pub const DEFAULT_DRAWS: usize = 10_000;

/// Draws handled by one generator stream. Fixed so that results do not depend
/// on the number of worker threads.
const CHUNK: usize = 250;

/// Probabilities within this distance count as tied in [`select_axes`].
const TIE_TOL: f64 = 1e-12;

/// A selected principal axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedAxis {
    pub index: usize,
    pub eigenvalue: f64,
    pub vector: Vec<f64>,
}

/// Output of tailoring: the chosen axes plus the Monte Carlo diagnostics.
///
/// Axis indices are 0-based, with 0 the most varying axis. `axes` is in
/// selection order (decreasing argmax probability).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSelection {
    pub dim: usize,
    pub lag: usize,
    /// Absent for fixed selections built with [`ProjectionSelection::from_axes`].
    pub cutoff: Option<f64>,
    pub draws: usize,
    pub axes: Vec<SelectedAxis>,
    pub argmax_probs: Vec<f64>,
    pub mean_sensitivity: Vec<f64>,
    /// Contribution of each change type to `argmax_probs`, keyed by type name.
    pub type_contributions: TypeContributions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeContributions {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub correlation: Vec<f64>,
}

impl TypeContributions {
    pub fn get(&self, ctype: ChangeType) -> &[f64] {
        match ctype {
            ChangeType::Mean => &self.mean,
            ChangeType::Variance => &self.variance,
            ChangeType::Correlation => &self.correlation,
        }
    }
}

impl ProjectionSelection {
    pub fn indices(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.index).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.axes.is_empty()
    }

    /// Selection of the given axes of `es` without Monte Carlo diagnostics,
    /// e.g. the `J` most varying axes.
    pub fn from_axes(es: &EigenSystem, indices: &[usize], lag: usize) -> Result<Self> {
        let d = es.dim();
        if indices.is_empty() {
            return Err(Error::InvalidConfig("at least one axis is required".into()));
        }
        if let Some(&j) = indices.iter().find(|&&j| j >= d) {
            return Err(Error::InvalidConfig(format!("axis {j} out of range for dimension {d}")));
        }
        Ok(Self {
            dim: d,
            lag,
            cutoff: None,
            draws: 0,
            axes: indices.iter().map(|&j| axis(es, j)).collect(),
            argmax_probs: Vec::new(),
            mean_sensitivity: Vec::new(),
            type_contributions: TypeContributions {
                mean: Vec::new(),
                variance: Vec::new(),
                correlation: Vec::new(),
            },
        })
    }

    /// The `count` most varying axes.
    pub fn most_varying(es: &EigenSystem, count: usize, lag: usize) -> Result<Self> {
        let idx: Vec<usize> = (0..count.min(es.dim())).collect();
        Self::from_axes(es, &idx, lag)
    }
}

fn axis(es: &EigenSystem, j: usize) -> SelectedAxis {
    SelectedAxis {
        index: j,
        eigenvalue: es.values[j],
        vector: es.vectors.column(j).iter().copied().collect(),
    }
}

/// Monte Carlo estimates from [`estimate_argmax_probabilities`].
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxEstimate {
    pub probs: Vec<f64>,
    pub mean_sensitivity: Vec<f64>,
    pub type_contributions: TypeContributions,
}

/// Estimates `P̂_j`, the probability that axis `j` has the largest sensitivity
/// under a random change from `spec`, over `draws` draws.
///
/// Exact ties between sensitivities go to the lowest axis index.
pub fn estimate_argmax_probabilities<R: Rng + ?Sized>(
    base: &CorrelationMatrix,
    spec: &ChangeDistributionSpec,
    draws: usize,
    rng: &mut R,
) -> Result<ArgmaxEstimate> {
    let es = eigensystem(base);
    estimate_with(base, &es, spec, draws, 0, rng)
}

fn estimate_with<R: Rng + ?Sized>(
    base: &CorrelationMatrix,
    es: &EigenSystem,
    spec: &ChangeDistributionSpec,
    draws: usize,
    lag: usize,
    rng: &mut R,
) -> Result<ArgmaxEstimate> {
    if draws == 0 {
        return Err(Error::InvalidConfig("at least one Monte Carlo draw is required".into()));
    }
    let d = base.dim();
    if d % (lag + 1) != 0 {
        return Err(Error::InvalidConfig(format!(
            "dimension {d} is not a multiple of lag + 1 = {}",
            lag + 1
        )));
    }
    spec.validate(d / (lag + 1))?;
    let engine = SensitivityEngine::new(base, es, DEFAULT_PD_FLOOR)?;
    let master = master_seed(rng);
    let chunks = draws.div_ceil(CHUNK);

    struct Partial {
        counts: [Vec<u64>; 3],
        sums: Vec<f64>,
    }

    let partials: Vec<Partial> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = task_rng(master, c as u64);
            let n = CHUNK.min(draws - c * CHUNK);
            let mut part = Partial {
                counts: [vec![0; d], vec![0; d], vec![0; d]],
                sums: vec![0.0; d],
            };
            let mut h = Vec::with_capacity(d);
            for _ in 0..n {
                let sc = sample_change_lagged(spec, base, lag, &mut rng)?;
                engine.sensitivities(&sc, &mut h)?;
                let mut best = 0;
                for j in 1..d {
                    if h[j] > h[best] {
                        best = j;
                    }
                }
                part.counts[sc.ctype.index()][best] += 1;
                for (s, v) in part.sums.iter_mut().zip(&h) {
                    *s += v;
                }
            }
            Ok(part)
        })
        .collect::<Result<_>>()?;

    let mut counts = [vec![0u64; d], vec![0u64; d], vec![0u64; d]];
    let mut sums = vec![0.0; d];
    for p in &partials {
        for t in 0..3 {
            for j in 0..d {
                counts[t][j] += p.counts[t][j];
            }
        }
        for j in 0..d {
            sums[j] += p.sums[j];
        }
    }
    let b = draws as f64;
    let frac = |v: &Vec<u64>| v.iter().map(|&c| c as f64 / b).collect::<Vec<f64>>();
    let probs = (0..d)
        .map(|j| (counts[0][j] + counts[1][j] + counts[2][j]) as f64 / b)
        .collect();
    Ok(ArgmaxEstimate {
        probs,
        mean_sensitivity: sums.iter().map(|s| s / b).collect(),
        type_contributions: TypeContributions {
            mean: frac(&counts[0]),
            variance: frac(&counts[1]),
            correlation: frac(&counts[2]),
        },
    })
}

/// Smallest set of axes whose probabilities sum to at least `cutoff`.
///
/// Axes are taken in decreasing probability, ties going to the larger index.
/// A cutoff of zero still returns the single top axis.
pub fn select_axes(probs: &[f64], cutoff: f64) -> Result<Vec<usize>> {
    if probs.is_empty() {
        return Err(Error::InvalidConfig("empty probability vector".into()));
    }
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::InvalidConfig(format!("cutoff {cutoff} outside [0, 1]")));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        if (probs[a] - probs[b]).abs() <= TIE_TOL {
            b.cmp(&a)
        } else {
            probs[b].total_cmp(&probs[a])
        }
    });
    let mut chosen = Vec::new();
    let mut total = 0.0;
    for j in order {
        chosen.push(j);
        total += probs[j];
        if total >= cutoff - TIE_TOL {
            break;
        }
    }
    Ok(chosen)
}

/// Full tailoring of a pre-change correlation matrix.
pub fn tailor<R: Rng + ?Sized>(
    base: &CorrelationMatrix,
    spec: &ChangeDistributionSpec,
    cutoff: f64,
    draws: usize,
    rng: &mut R,
) -> Result<ProjectionSelection> {
    tailor_lagged(base, spec, cutoff, draws, 0, rng)
}

/// Tailoring for a lag-extended base of dimension `D (lag + 1)`. Each sampled
/// change acts on the `D` raw streams and is copied onto every lag block.
pub fn tailor_lagged<R: Rng + ?Sized>(
    base: &CorrelationMatrix,
    spec: &ChangeDistributionSpec,
    cutoff: f64,
    draws: usize,
    lag: usize,
    rng: &mut R,
) -> Result<ProjectionSelection> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::InvalidConfig(format!("cutoff {cutoff} outside [0, 1]")));
    }
    let es = eigensystem(base);
    let est = estimate_with(base, &es, spec, draws, lag, rng)?;
    let chosen = select_axes(&est.probs, cutoff)?;
    Ok(ProjectionSelection {
        dim: base.dim(),
        lag,
        cutoff: Some(cutoff),
        draws,
        axes: chosen.iter().map(|&j| axis(&es, j)).collect(),
        argmax_probs: est.probs,
        mean_sensitivity: est.mean_sensitivity,
        type_contributions: est.type_contributions,
    })
}
