//! Threshold calibration by simulating the monitor's maximum statistic under
//! no change.
//!
//! Every replicate draws a synthetic training set and a monitoring run of
//! length `n`, refits the model (same axis indices, fresh eigensystem) and
//! records the largest statistic over the run. One set of maxima serves every
//! candidate threshold.

mod binomial;

pub use binomial::{beta_quantile, clopper_pearson_lower, clopper_pearson_upper, Proportion};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrcore::{estimate_training, TrainingSummary};
use crate::error::{Error, Result};
use crate::mixmonitor::{Monitor, MonitorConfig, MonitorModel, Projection};
use crate::rng::{master_seed, task_rng, TaskRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    ParametricNormal,
    BlockBootstrap,
}

/// Calibration settings. `horizon` is the monitoring length `n` in monitored
/// steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub alpha: f64,
    pub horizon: usize,
    pub confidence: f64,
    pub replicates: usize,
    pub mode: CalibrationMode,
    /// Block length for [`CalibrationMode::BlockBootstrap`]; `None` picks
    /// [`default_block_len`].
    pub block_len: Option<usize>,
    pub p0: f64,
    pub window: usize,
}

impl CalibrationConfig {
    pub fn new(alpha: f64, horizon: usize, confidence: f64, replicates: usize) -> Self {
        Self {
            alpha,
            horizon,
            confidence,
            replicates,
            mode: CalibrationMode::ParametricNormal,
            block_len: None,
            p0: 1.0,
            window: crate::mixmonitor::DEFAULT_WINDOW,
        }
    }

    pub fn validate(&self, training_len: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.alpha * (self.replicates as f64) < 5.0 {
            return bad(format!(
                "alpha * replicates = {} is below 5",
                self.alpha * self.replicates as f64
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return bad(format!("confidence must lie in (0, 1), got {}", self.confidence));
        }
        if self.horizon < 2 {
            return bad(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if let Some(len) = self.block_len {
            if len == 0 || len > training_len {
                return bad(format!("block length {len} outside 1..={training_len}"));
            }
        }
        self.monitor_config().validate()
    }

    fn monitor_config(&self) -> MonitorConfig {
        MonitorConfig {
            p0: self.p0,
            window: self.window,
            threshold: f64::INFINITY,
        }
    }
}

/// Default moving-block length `max(25, 2l + 2)`, capped at the training length.
pub fn default_block_len(lag: usize, training_len: usize) -> usize {
    (2 * lag + 2).max(25).min(training_len)
}

/// What a replicate refits: the monitored streams and the lag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub projection: Projection,
    pub lag: usize,
}

/// Calibrated threshold with the simulated maxima behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    /// Replicates whose maximum reaches the threshold.
    pub pfa_estimate: Proportion,
    pub replicate_maxima: Vec<f64>,
    /// Configuration with the block length resolved.
    pub config: CalibrationConfig,
}

/// Largest statistic over a monitoring run of a model refitted to `training`.
///
/// `monitoring` holds raw rows; with lag `l` the first `l` rows only warm up
/// the lag history.
pub fn replicate_maximum(
    template: &ModelTemplate,
    cfg: MonitorConfig,
    training: &DMatrix<f64>,
    monitoring: &DMatrix<f64>,
) -> Result<f64> {
    let model = MonitorModel::fit(training, &template.projection, template.lag)?;
    let cfg = MonitorConfig {
        threshold: f64::INFINITY,
        ..cfg
    };
    let mut mon = Monitor::new(&model, cfg)?;
    let mut best = f64::NEG_INFINITY;
    let mut x = vec![0.0; monitoring.ncols()];
    for r in 0..monitoring.nrows() {
        for (c, v) in x.iter_mut().enumerate() {
            *v = monitoring[(r, c)];
        }
        if let Some(step) = mon.observe(&x)? {
            best = best.max(step.stat);
        }
    }
    Ok(best)
}

/// Concatenated moving blocks of `block_len` consecutive rows of `training`,
/// block starts uniform over `0..=m − block_len`, truncated to `out_len` rows.
pub fn block_bootstrap_sample<R: Rng + ?Sized>(
    training: &DMatrix<f64>,
    block_len: usize,
    out_len: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (m, d) = training.shape();
    if block_len == 0 || block_len > m {
        return Err(Error::InvalidConfig(format!("block length {block_len} outside 1..={m}")));
    }
    let mut out = DMatrix::zeros(out_len, d);
    let mut row = 0;
    while row < out_len {
        let start = rng.random_range(0..=m - block_len);
        let take = block_len.min(out_len - row);
        for i in 0..take {
            for c in 0..d {
                out[(row + i, c)] = training[(start + i, c)];
            }
        }
        row += take;
    }
    Ok(out)
}

/// Gaussian generator reproducing a training summary's mean and covariance.
#[derive(Debug, Clone)]
pub struct GaussianSource {
    mean: DVector<f64>,
    chol: DMatrix<f64>,
}

impl GaussianSource {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateCorrelation("covariance is not positive definite".into()))?
            .l();
        Ok(Self { mean, chol })
    }

    pub fn from_summary(summary: &TrainingSummary) -> Result<Self> {
        Self::new(summary.mean.clone(), &summary.covariance())
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `rows × D` matrix of independent draws.
    pub fn sample<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> DMatrix<f64> {
        let d = self.dim();
        let mut out = DMatrix::zeros(rows, d);
        let mut e = vec![0.0; d];
        let mut row = vec![0.0; d];
        for r in 0..rows {
            self.draw_into(&mut e, &mut row, rng);
            for (i, v) in row.iter().enumerate() {
                out[(r, i)] = *v;
            }
        }
        out
    }

    /// One draw written to `out`; `scratch` holds the standard normals and
    /// must have length `D` like `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, scratch: &mut [f64], out: &mut [f64], rng: &mut R) {
        for v in scratch.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = self.mean[i];
            for (j, ej) in scratch.iter().enumerate().take(i + 1) {
                s += self.chol[(i, j)] * ej;
            }
            *o = s;
        }
    }
}

/// Threshold from simulated maxima: the `x`-th largest maximum for the
/// largest exceedance count `x` whose one-sided Clopper–Pearson upper bound
/// at `confidence` stays at or below `alpha`.
///
/// Returns the threshold and the number of maxima reaching it.
pub fn threshold_from_maxima(maxima: &[f64], alpha: f64, confidence: f64) -> Result<(f64, usize)> {
    let b = maxima.len();
    if b == 0 {
        return Err(Error::InsufficientReplicates("no replicate maxima".into()));
    }
    if maxima.iter().any(|v| v.is_nan()) {
        return Err(Error::InsufficientReplicates("replicate maxima contain NaN".into()));
    }
    // the bound increases with x, so bisect for the last admissible count
    let admissible = |x: usize| clopper_pearson_upper(x, b, confidence) <= alpha;
    if !admissible(0) {
        return Err(Error::InsufficientReplicates(format!(
            "{b} replicates cannot certify alpha = {alpha} at confidence {confidence}"
        )));
    }
    let (mut lo, mut hi) = (0usize, b);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if admissible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let allowed = lo;
    let mut desc = maxima.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    // ties at the cut would add exceedances; move up to the next distinct value
    let mut x = allowed;
    while x >= 1 {
        let cand = desc[x - 1];
        let count = desc.iter().take_while(|&&v| v >= cand).count();
        if count <= allowed {
            break;
        }
        x -= 1;
    }
    if x <= 1 {
        return Err(Error::InsufficientReplicates(format!(
            "the calibrated quantile is the sample maximum ({allowed} exceedances allowed of {b})"
        )));
    }
    let threshold = desc[x - 1];
    Ok((threshold, desc.iter().take_while(|&&v| v >= threshold).count()))
}

/// Calibrates the alarm threshold for monitoring runs of length `cfg.horizon`
/// of models refitted like `template` to training sets resembling `training`
/// (raw rows).
pub fn calibrate_threshold<R: Rng + ?Sized>(
    template: &ModelTemplate,
    training: &DMatrix<f64>,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<CalibrationResult> {
    let m = training.nrows();
    cfg.validate(m)?;
    let mut cfg = *cfg;
    match cfg.mode {
        CalibrationMode::ParametricNormal => {
            cfg.block_len = None;
            let source = GaussianSource::from_summary(&estimate_training(training)?)?;
            simulate_maxima(template, &cfg, m, &Sampler::Gaussian(&source), rng)
        }
        CalibrationMode::BlockBootstrap => {
            let len = cfg.block_len.unwrap_or_else(|| default_block_len(template.lag, m));
            cfg.block_len = Some(len);
            simulate_maxima(template, &cfg, m, &Sampler::Blocks(training, len), rng)
        }
    }
}

/// Parametric calibration against a known generator instead of a training
/// set, with training sets of `training_len` rows drawn from `source`.
pub fn calibrate_with_source<R: Rng + ?Sized>(
    template: &ModelTemplate,
    source: &GaussianSource,
    training_len: usize,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<CalibrationResult> {
    cfg.validate(training_len)?;
    let cfg = CalibrationConfig {
        mode: CalibrationMode::ParametricNormal,
        block_len: None,
        ..*cfg
    };
    simulate_maxima(template, &cfg, training_len, &Sampler::Gaussian(source), rng)
}

enum Sampler<'a> {
    Gaussian(&'a GaussianSource),
    Blocks(&'a DMatrix<f64>, usize),
}

fn simulate_maxima<R: Rng + ?Sized>(
    template: &ModelTemplate,
    cfg: &CalibrationConfig,
    m: usize,
    sampler: &Sampler<'_>,
    rng: &mut R,
) -> Result<CalibrationResult> {
    let master = master_seed(rng);
    let monitored_rows = cfg.horizon + template.lag;
    let maxima: Vec<f64> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng: TaskRng = task_rng(master, r as u64);
            let (train, mon) = match sampler {
                Sampler::Gaussian(src) => (src.sample(m, &mut rng), src.sample(monitored_rows, &mut rng)),
                Sampler::Blocks(training, len) => {
                    let all = block_bootstrap_sample(training, *len, m + monitored_rows, &mut rng)?;
                    (all.rows(0, m).into_owned(), all.rows(m, monitored_rows).into_owned())
                }
            };
            replicate_maximum(template, cfg.monitor_config(), &train, &mon)
        })
        .collect::<Result<_>>()?;
    let (threshold, exceed) = threshold_from_maxima(&maxima, cfg.alpha, cfg.confidence)?;
    Ok(CalibrationResult {
        threshold,
        pfa_estimate: Proportion::new(exceed, maxima.len(), 0.95),
        replicate_maxima: maxima,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn iid(m: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = seeded(seed);
        DMatrix::from_fn(m, d, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn invalid_configs() {
        let mut c = CalibrationConfig::new(0.01, 100, 0.95, 100);
        assert!(c.validate(50).is_err());
        c.replicates = 500;
        assert!(c.validate(50).is_ok());
        c.alpha = 1.0;
        c.replicates = 10_000;
        assert!(c.validate(50).is_err());
        let mut c = CalibrationConfig::new(0.05, 50, 0.95, 200);
        c.block_len = Some(60);
        assert!(c.validate(50).is_err());
    }

    #[test]
    fn threshold_is_order_statistic() {
        let maxima: Vec<f64> = (1..=1000).map(|v| v as f64).collect();
        let (b, x) = threshold_from_maxima(&maxima, 0.05, 0.5).unwrap();
        assert_eq!(b, (1001 - x) as f64);
        assert!(clopper_pearson_upper(x, 1000, 0.5) <= 0.05);
        assert!(clopper_pearson_upper(x + 1, 1000, 0.5) > 0.05);
        // the same maxima answer a second alpha without re-simulation
        let (b2, x2) = threshold_from_maxima(&maxima, 0.1, 0.5).unwrap();
        assert_eq!(b2, (1001 - x2) as f64);
        assert!(b2 < b);
    }

    #[test]
    fn ties_do_not_add_exceedances() {
        let mut maxima = vec![1.0; 90];
        maxima.extend(std::iter::repeat(5.0).take(10));
        maxima.extend((0..100).map(|v| 10.0 + v as f64));
        // about 104 exceedances allowed, which would cut through the run of fives
        let (b, x) = threshold_from_maxima(&maxima, 0.525, 0.5).unwrap();
        let count = maxima.iter().filter(|&&v| v >= b).count();
        assert_eq!((b, count, x), (10.0, 100, 100));
    }

    #[test]
    fn too_strict_is_insufficient() {
        let maxima: Vec<f64> = (0..20).map(|v| v as f64).collect();
        assert!(matches!(
            threshold_from_maxima(&maxima, 0.05, 0.95),
            Err(Error::InsufficientReplicates(_))
        ));
    }

    #[test]
    fn block_bootstrap_full_block_repeats_training() {
        let train = DMatrix::from_fn(7, 2, |r, c| (10 * r + c) as f64);
        let out = block_bootstrap_sample(&train, 7, 17, &mut seeded(1)).unwrap();
        for r in 0..17 {
            assert_eq!(out[(r, 0)], train[(r % 7, 0)]);
        }
    }

    #[test]
    fn block_bootstrap_blocks_are_contiguous() {
        let train = DMatrix::from_fn(40, 1, |r, _| r as f64);
        let out = block_bootstrap_sample(&train, 5, 23, &mut seeded(2)).unwrap();
        for start in (0..23).step_by(5) {
            for i in 1..5.min(23 - start) {
                assert_eq!(out[(start + i, 0)], out[(start, 0)] + i as f64);
            }
        }
    }

    #[test]
    fn replicate_maximum_deterministic_and_minimal_horizon() {
        let train = iid(40, 3, 3);
        let mon = iid(2, 3, 4);
        let template = ModelTemplate {
            projection: Projection::Axes(vec![0, 2]),
            lag: 0,
        };
        let cfg = MonitorConfig::default();
        let a = replicate_maximum(&template, cfg, &train, &mon).unwrap();
        let b = replicate_maximum(&template, cfg, &train, &mon).unwrap();
        assert_eq!(a, b);
        assert!(a.is_finite());
        // n = 2 has one admissible pair (k = 0, t = 2)
        let model = MonitorModel::fit(&train, &template.projection, 0).unwrap();
        let out = crate::mixmonitor::run_monitor(&model, cfg, mon.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>())).unwrap();
        assert_eq!(out.trace[1].stat, a);
        assert_eq!(out.trace[1].argmax_k, Some(0));
    }

    #[test]
    fn calibration_is_reproducible() {
        let train = iid(60, 4, 5);
        let template = ModelTemplate {
            projection: Projection::Axes(vec![3]),
            lag: 0,
        };
        let mut cfg = CalibrationConfig::new(0.1, 20, 0.5, 100);
        cfg.window = 20;
        let a = calibrate_threshold(&template, &train, &cfg, &mut seeded(6)).unwrap();
        let b = calibrate_threshold(&template, &train, &cfg, &mut seeded(6)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.replicate_maxima.len(), 100);
        let exceed = a.replicate_maxima.iter().filter(|&&v| v >= a.threshold).count();
        assert_eq!(exceed, a.pfa_estimate.successes);
        assert!(clopper_pearson_upper(exceed, 100, 0.5) <= 0.1);
    }

    #[test]
    fn block_mode_records_default_length() {
        let train = iid(60, 2, 7);
        let template = ModelTemplate {
            projection: Projection::Identity,
            lag: 1,
        };
        let mut cfg = CalibrationConfig::new(0.1, 10, 0.5, 60);
        cfg.mode = CalibrationMode::BlockBootstrap;
        cfg.window = 10;
        let res = calibrate_threshold(&template, &train, &cfg, &mut seeded(8)).unwrap();
        assert_eq!(res.config.block_len, Some(25));
    }
}
