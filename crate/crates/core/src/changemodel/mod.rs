//! Change distributions, post-change parameters and projection sensitivity.
//!
//! A change is one of three types (mean, standard deviation, correlation)
//! confined to a random subset of affected streams. Everything here works on
//! the standardized scale: the pre-change mean is zero and the pre-change
//! covariance is the correlation matrix.

mod divergence;

pub use divergence::{hellinger_normal, Divergence, Hellinger, NormalParams};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corrcore::{nearest_pd_correlation, CorrelationMatrix, EigenSystem, DEFAULT_PD_FLOOR};
use crate::error::{Error, Result};
use crate::matrix_serde;

/// Redraw limit when sampled correlation factors leave `(-1, 1)`.
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeType {
    Mean,
    Variance,
    Correlation,
}

impl ChangeType {
    pub const ALL: [ChangeType; 3] = [ChangeType::Mean, ChangeType::Variance, ChangeType::Correlation];

    pub fn index(self) -> usize {
        match self {
            ChangeType::Mean => 0,
            ChangeType::Variance => 1,
            ChangeType::Correlation => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChangeType::Mean => "mean",
            ChangeType::Variance => "variance",
            ChangeType::Correlation => "correlation",
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Distribution over sparse changes.
///
/// Serialized field names are part of the file format. `type_probs` is
/// `[p_mean, p_sdev, p_corr]`; `sparsity_max: null` means `⌊D/2⌋`;
/// `sdev_ranges` are the decrease and increase intervals, each drawn with
/// probability one half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChangeDistributionSpec {
    pub type_probs: [f64; 3],
    pub sparsity_max: Option<usize>,
    pub mean_range: Interval,
    pub sdev_ranges: [Interval; 2],
    pub corr_factor_range: Interval,
    pub equal_across_dims: bool,
}

impl Default for ChangeDistributionSpec {
    fn default() -> Self {
        Self {
            type_probs: [1.0 / 3.0; 3],
            sparsity_max: None,
            mean_range: Interval::new(-1.5, 1.5),
            sdev_ranges: [Interval::new(1.0 / 2.5, 1.0), Interval::new(1.0, 2.5)],
            corr_factor_range: Interval::new(0.0, 1.0),
            equal_across_dims: false,
        }
    }
}

impl ChangeDistributionSpec {
    /// Default sizes with all probability on one change type.
    pub fn only(ctype: ChangeType) -> Self {
        let mut probs = [0.0; 3];
        probs[ctype.index()] = 1.0;
        Self {
            type_probs: probs,
            ..Self::default()
        }
    }

    /// Largest sparsity for a `dim`-stream problem.
    pub fn sparsity_max_for(&self, dim: usize) -> usize {
        self.sparsity_max.unwrap_or(dim / 2).clamp(1, dim.max(1))
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.type_probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("type_probs {:?} outside [0, 1]", self.type_probs));
        }
        let total: f64 = self.type_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("type_probs sum to {total}, expected 1"));
        }
        if let Some(k) = self.sparsity_max {
            if k == 0 || k > dim {
                return bad(format!("sparsity_max {k} outside 1..={dim}"));
            }
        }
        if !self.mean_range.is_valid() {
            return bad("mean_range is not a valid interval".into());
        }
        for r in &self.sdev_ranges {
            if !r.is_valid() || r.lo <= 0.0 {
                return bad("sdev_ranges must be valid, strictly positive intervals".into());
            }
        }
        if !self.corr_factor_range.is_valid() {
            return bad("corr_factor_range is not a valid interval".into());
        }
        if self.type_probs[2] > 0.0 && dim < 2 {
            return bad("correlation changes need at least two streams".into());
        }
        Ok(())
    }
}

/// One sampled change.
///
/// Only the size field of the sampled type is populated. `corr_factors` holds
/// `(d, i, a_di)` with `d < i`, both in `affected`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeScenario {
    pub ctype: ChangeType,
    pub affected: Vec<usize>,
    pub mean_sizes: Vec<f64>,
    pub sdev_factors: Vec<f64>,
    pub corr_factors: Vec<(usize, usize, f64)>,
}

impl ChangeScenario {
    pub fn sparsity(&self) -> usize {
        self.affected.len()
    }

    /// Change of `ctype` with common size `size` on a uniformly drawn set of `k`
    /// streams out of `dim`.
    pub fn with_uniform_size<R: Rng + ?Sized>(
        ctype: ChangeType,
        dim: usize,
        k: usize,
        size: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if k == 0 || k > dim {
            return Err(Error::InvalidConfig(format!("sparsity {k} outside 1..={dim}")));
        }
        let mut affected = index::sample(rng, dim, k).into_vec();
        affected.sort_unstable();
        Ok(Self::from_sizes(ctype, affected, size))
    }

    /// Change of `ctype` on `affected` with every size equal to `size`.
    pub fn from_sizes(ctype: ChangeType, affected: Vec<usize>, size: f64) -> Self {
        let k = affected.len();
        let mut sc = Self {
            ctype,
            affected,
            mean_sizes: Vec::new(),
            sdev_factors: Vec::new(),
            corr_factors: Vec::new(),
        };
        match ctype {
            ChangeType::Mean => sc.mean_sizes = vec![size; k],
            ChangeType::Variance => sc.sdev_factors = vec![size; k],
            ChangeType::Correlation => {
                sc.corr_factors = pairs(&sc.affected).map(|(d, i)| (d, i, size)).collect()
            }
        }
        sc
    }

    /// Duplicates a change on `raw_dim` streams onto every lag block of the
    /// `(lag + 1) · raw_dim` lag-extended vector.
    ///
    /// Correlation factors apply between copies of different raw streams; the
    /// autocorrelation of a stream with its own lags is left alone.
    pub fn lag_extend(&self, raw_dim: usize, lag: usize) -> Self {
        if lag == 0 {
            return self.clone();
        }
        let blocks = lag + 1;
        let mut affected = Vec::with_capacity(self.affected.len() * blocks);
        let mut mean_sizes = Vec::new();
        let mut sdev_factors = Vec::new();
        for b in 0..blocks {
            for (pos, &d) in self.affected.iter().enumerate() {
                affected.push(b * raw_dim + d);
                if let Some(&mu) = self.mean_sizes.get(pos) {
                    mean_sizes.push(mu);
                }
                if let Some(&s) = self.sdev_factors.get(pos) {
                    sdev_factors.push(s);
                }
            }
        }
        let mut corr_factors = Vec::with_capacity(self.corr_factors.len() * blocks * blocks);
        for &(d, i, a) in &self.corr_factors {
            for bd in 0..blocks {
                for bi in 0..blocks {
                    let (x, y) = (bd * raw_dim + d, bi * raw_dim + i);
                    corr_factors.push((x.min(y), x.max(y), a));
                }
            }
        }
        Self {
            ctype: self.ctype,
            affected,
            mean_sizes,
            sdev_factors,
            corr_factors,
        }
    }
}

fn pairs(affected: &[usize]) -> impl Iterator<Item = (usize, usize)> + '_ {
    affected
        .iter()
        .enumerate()
        .flat_map(move |(a, &d)| affected[a + 1..].iter().map(move |&i| (d.min(i), d.max(i))))
}

/// Draws one change from `spec` for the dimension of `base`.
pub fn sample_change<R: Rng + ?Sized>(
    spec: &ChangeDistributionSpec,
    base: &CorrelationMatrix,
    rng: &mut R,
) -> Result<ChangeScenario> {
    sample_change_lagged(spec, base, 0, rng)
}

/// Draws a change for the raw streams behind a lag-extended `base` of
/// dimension `D (lag + 1)` and duplicates it onto every lag block.
///
/// Sparsity is drawn uniformly from `1..=K_max`, except that correlation
/// changes need two affected streams and draw from `2..=K_max`.
pub fn sample_change_lagged<R: Rng + ?Sized>(
    spec: &ChangeDistributionSpec,
    base: &CorrelationMatrix,
    lag: usize,
    rng: &mut R,
) -> Result<ChangeScenario> {
    let full = base.dim();
    if full % (lag + 1) != 0 {
        return Err(Error::DimensionMismatch {
            expected: (full / (lag + 1)) * (lag + 1),
            found: full,
        });
    }
    let dim = full / (lag + 1);
    let ctype = draw_type(&spec.type_probs, rng);
    let k_max = spec.sparsity_max_for(dim);
    let k_min = if ctype == ChangeType::Correlation { 2.min(k_max) } else { 1 };
    let k = rng.random_range(k_min..=k_max);
    let mut affected = index::sample(rng, dim, k).into_vec();
    affected.sort_unstable();

    let mut sc = ChangeScenario {
        ctype,
        affected,
        mean_sizes: Vec::new(),
        sdev_factors: Vec::new(),
        corr_factors: Vec::new(),
    };
    let shared = spec.equal_across_dims;
    match ctype {
        ChangeType::Mean => sc.mean_sizes = draw_sizes(k, shared, rng, |r| spec.mean_range.sample(r)),
        ChangeType::Variance => {
            sc.sdev_factors = draw_sizes(k, shared, rng, |r| {
                let half = if r.random_bool(0.5) { 0 } else { 1 };
                spec.sdev_ranges[half].sample(r)
            })
        }
        ChangeType::Correlation => {
            let npairs = k * (k - 1) / 2;
            let mut accepted = false;
            for _ in 0..MAX_REDRAWS {
                let factors = draw_sizes(npairs, shared, rng, |r| spec.corr_factor_range.sample(r));
                sc.corr_factors = pairs(&sc.affected)
                    .zip(factors)
                    .map(|((d, i), a)| (d, i, a))
                    .collect();
                let ext = sc.lag_extend(dim, lag);
                if ext.corr_factors.iter().all(|&(d, i, a)| {
                    let v = a * base.get(d, i);
                    v > -1.0 && v < 1.0
                }) {
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::InvalidConfig(format!(
                    "correlation factors left (-1, 1) after {MAX_REDRAWS} redraws"
                )));
            }
        }
    }
    Ok(sc.lag_extend(dim, lag))
}

fn draw_type<R: Rng + ?Sized>(probs: &[f64; 3], rng: &mut R) -> ChangeType {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for t in ChangeType::ALL {
        acc += probs[t.index()];
        if u < acc {
            return t;
        }
    }
    // u landed in the rounding slack above the cumulative sum
    *ChangeType::ALL
        .iter()
        .rev()
        .find(|t| probs[t.index()] > 0.0)
        .unwrap_or(&ChangeType::Mean)
}

fn draw_sizes<R: Rng + ?Sized>(
    n: usize,
    shared: bool,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> f64,
) -> Vec<f64> {
    if shared {
        let v = draw(rng);
        vec![v; n]
    } else {
        (0..n).map(|_| draw(rng)).collect()
    }
}

/// Post-change mean and covariance on the standardized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostChangeParams {
    #[serde(with = "matrix_serde::vector")]
    pub mean: DVector<f64>,
    #[serde(with = "matrix_serde::rows")]
    pub cov: DMatrix<f64>,
}

impl PostChangeParams {
    pub fn unchanged(base: &CorrelationMatrix) -> Self {
        Self {
            mean: DVector::zeros(base.dim()),
            cov: base.matrix().clone(),
        }
    }
}

/// Post-change parameters of `sc` applied to the pre-change correlation `base`.
///
/// Mean changes shift the affected means. Variance changes give `C·base·C`
/// with `C = diag(σ_d)`. Correlation changes scale the affected correlations,
/// after which the matrix is repaired to a correlation matrix with eigenvalues
/// at least `pd_floor` when necessary.
pub fn apply_change(
    base: &CorrelationMatrix,
    sc: &ChangeScenario,
    pd_floor: f64,
) -> Result<PostChangeParams> {
    let d = base.dim();
    if let Some(&bad) = sc.affected.iter().find(|&&i| i >= d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad + 1,
        });
    }
    let mut post = PostChangeParams::unchanged(base);
    match sc.ctype {
        ChangeType::Mean => {
            for (&i, &mu) in sc.affected.iter().zip(&sc.mean_sizes) {
                post.mean[i] = mu;
            }
        }
        ChangeType::Variance => {
            let mut scale = vec![1.0; d];
            for (&i, &s) in sc.affected.iter().zip(&sc.sdev_factors) {
                scale[i] = s;
            }
            post.cov = DMatrix::from_fn(d, d, |i, j| scale[i] * base.get(i, j) * scale[j]);
        }
        ChangeType::Correlation => {
            let mut m = base.matrix().clone();
            for &(i, j, a) in &sc.corr_factors {
                let v = a * base.get(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
            post.cov = nearest_pd_correlation(&m, pd_floor)?.into_inner();
        }
    }
    Ok(post)
}

/// Sensitivity `H_j` of every projection onto the axes of `es` to the change
/// from `N(0, Σ₀)` to `post`.
pub fn projection_sensitivities(es: &EigenSystem, post: &PostChangeParams) -> Result<Vec<f64>> {
    projection_divergences(es, post, &Hellinger)
}

/// As [`projection_sensitivities`] with a caller-chosen divergence.
pub fn projection_divergences(
    es: &EigenSystem,
    post: &PostChangeParams,
    divergence: &dyn Divergence,
) -> Result<Vec<f64>> {
    let d = es.dim();
    if post.mean.len() != d || post.cov.nrows() != d || post.cov.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: post.mean.len(),
        });
    }
    let post_means = es.vectors.tr_mul(&post.mean);
    let cov_v = &post.cov * &es.vectors;
    (0..d)
        .map(|j| {
            let lambda = es.values[j];
            if !(lambda > DEFAULT_PD_FLOOR) {
                return Err(Error::ZeroEigenvalue {
                    axis: j,
                    value: lambda,
                });
            }
            let var = es.vectors.column(j).dot(&cov_v.column(j));
            Ok(divergence.between(
                NormalParams::new(0.0, lambda.sqrt()),
                NormalParams::new(post_means[j], var.max(f64::MIN_POSITIVE).sqrt()),
            ))
        })
        .collect()
}
