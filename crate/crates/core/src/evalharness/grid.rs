//! Scenario grids: every detector on every cell. Detectors are resolved once
//! per change type and calibrated once per distinct set of monitored streams.

use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{
    calibrate_detector, estimate_edd, estimate_pfa, replicate_trials, truncated_mean_delay, Detector,
    ResolvedDetector, ScenarioDraw, TrialTemplate,
};
use crate::calibrate::CalibrationConfig;
use crate::changemodel::{ChangeDistributionSpec, ChangeType};
use crate::corrcore::{random_correlation, CorrelationMatrix};
use crate::error::{Error, Result};
use crate::mixmonitor::Projection;
use crate::rng::task_rng;
use crate::tailor::DEFAULT_DRAWS;

pub const GRID_SCHEMA: &str = "tpca.grid/1";

// generator streams under the grid seed
const BASE_STREAM: u64 = 0;
const RESOLVE_STREAM: u64 = 1 << 20;
const CALIBRATE_STREAM: u64 = 2 << 20;
const CELL_STREAM: u64 = 3 << 20;

/// How thresholds are chosen: calibrated per detector, or one fixed value
/// (`"inf"` never alarms).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdChoice {
    Calibrate,
    Fixed(f64),
}

impl Serialize for ThresholdChoice {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            ThresholdChoice::Calibrate => s.serialize_str("calibrate"),
            ThresholdChoice::Fixed(b) if b == f64::INFINITY => s.serialize_str("inf"),
            ThresholdChoice::Fixed(b) if b == f64::NEG_INFINITY => s.serialize_str("-inf"),
            ThresholdChoice::Fixed(b) => s.serialize_f64(b),
        }
    }
}

impl<'de> Deserialize<'de> for ThresholdChoice {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(b) => Ok(ThresholdChoice::Fixed(b)),
            Raw::Str(s) => match s.as_str() {
                "calibrate" => Ok(ThresholdChoice::Calibrate),
                "inf" => Ok(ThresholdChoice::Fixed(f64::INFINITY)),
                "-inf" => Ok(ThresholdChoice::Fixed(f64::NEG_INFINITY)),
                other => Err(serde::de::Error::custom(format!(
                    "threshold must be a number, \"calibrate\", \"inf\" or \"-inf\", got \"{other}\""
                ))),
            },
        }
    }
}

/// One grid cell. `change_type: null` is a no-change cell, which estimates
/// the false alarm probability over `n` steps instead of the delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub change_type: Option<ChangeType>,
    #[serde(default)]
    pub sparsity: usize,
    #[serde(default)]
    pub size: f64,
}

impl CellSpec {
    fn draw(&self) -> ScenarioDraw {
        match self.change_type {
            None => ScenarioDraw::NoChange,
            Some(ctype) => ScenarioDraw::Uniform {
                ctype,
                sparsity: self.sparsity,
                size: self.size,
            },
        }
    }
}

/// Grid document. Missing fields take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub schema: String,
    pub seed: u64,
    pub dim: usize,
    pub m: usize,
    /// Vine parameter of the random pre-change correlation; ignored when
    /// `base` is given.
    pub alpha_d: f64,
    pub base: Option<CorrelationMatrix>,
    /// Monitoring length for calibration and false alarm cells.
    pub n: usize,
    /// Change cells run for `horizon_factor · n` steps before censoring.
    pub horizon_factor: usize,
    pub window: usize,
    pub kappa: usize,
    pub replicates: usize,
    pub alpha: f64,
    pub confidence: f64,
    pub calibration_replicates: usize,
    pub tailor_draws: usize,
    /// Change distribution for tailoring; `null` uses the default sizes
    /// restricted to each cell's change type.
    pub change_spec: Option<ChangeDistributionSpec>,
    pub detectors: Vec<Detector>,
    pub cells: Vec<CellSpec>,
    pub threshold: ThresholdChoice,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            schema: GRID_SCHEMA.into(),
            seed: 0,
            dim: 20,
            m: 100,
            alpha_d: 0.1,
            base: None,
            n: 100,
            horizon_factor: 10,
            window: crate::mixmonitor::DEFAULT_WINDOW,
            kappa: 0,
            replicates: 500,
            alpha: 0.01,
            confidence: 0.95,
            calibration_replicates: 2000,
            tailor_draws: DEFAULT_DRAWS,
            change_spec: None,
            detectors: Vec::new(),
            cells: Vec::new(),
            threshold: ThresholdChoice::Calibrate,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.schema != GRID_SCHEMA {
            return bad(format!("unsupported grid schema \"{}\", expected \"{GRID_SCHEMA}\"", self.schema));
        }
        let dim = self.base.as_ref().map_or(self.dim, |b| b.dim());
        if dim < 2 {
            return bad(format!("dimension {dim} is below 2"));
        }
        if self.base.is_none() && !(self.alpha_d > 0.0) {
            return bad(format!("alpha_d must be positive, got {}", self.alpha_d));
        }
        if self.m < 2 || self.n < 2 || self.horizon_factor == 0 || self.replicates == 0 {
            return bad("m and n must be at least 2; horizon_factor and replicates at least 1".into());
        }
        if self.detectors.is_empty() || self.cells.is_empty() {
            return bad("the grid needs at least one detector and one cell".into());
        }
        if self.kappa >= self.n * self.horizon_factor {
            return bad(format!("kappa {} must precede the horizon", self.kappa));
        }
        for (i, c) in self.cells.iter().enumerate() {
            if c.change_type.is_some() && (c.sparsity == 0 || c.sparsity > dim) {
                return bad(format!("cell {i}: sparsity {} outside 1..={dim}", c.sparsity));
            }
            if c.change_type == Some(ChangeType::Correlation) && c.sparsity < 2 {
                return bad(format!("cell {i}: correlation changes need sparsity of at least 2"));
            }
        }
        if let Some(spec) = &self.change_spec {
            spec.validate(dim)?;
        }
        if self.threshold == ThresholdChoice::Calibrate {
            self.calibration_config().validate(self.m)?;
        }
        Ok(())
    }

    fn calibration_config(&self) -> CalibrationConfig {
        CalibrationConfig {
            window: self.window,
            ..CalibrationConfig::new(self.alpha, self.n, self.confidence, self.calibration_replicates)
        }
    }

    fn tailoring_spec(&self, ctype: Option<ChangeType>) -> ChangeDistributionSpec {
        match (&self.change_spec, ctype) {
            (Some(spec), _) => spec.clone(),
            (None, Some(t)) => ChangeDistributionSpec::only(t),
            (None, None) => ChangeDistributionSpec::default(),
        }
    }
}

/// One tidy result row: a detector on a cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub cell: usize,
    pub detector: String,
    pub parameter: f64,
    pub change_type: String,
    pub sparsity: usize,
    pub size: Option<f64>,
    pub streams: usize,
    pub threshold: Option<f64>,
    pub edd: Option<f64>,
    /// Truncated mean delay, reported even when detections are too few for
    /// `edd`; a lower bound when runs are censored.
    pub edd_lower: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub detections: usize,
    pub censored: usize,
    pub false_alarms: usize,
    pub pfa: Option<f64>,
    pub pfa_low: Option<f64>,
    pub pfa_high: Option<f64>,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: usize,
    pub detector: String,
    pub parameter: f64,
    pub error: String,
}

/// Detector set-up shared by the cells of one change type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedEntry {
    pub change_type: Option<ChangeType>,
    pub resolved: ResolvedDetector,
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config: GridConfig,
    pub base: CorrelationMatrix,
    pub resolved: Vec<ResolvedEntry>,
    pub rows: Vec<GridRow>,
    pub failures: Vec<CellFailure>,
}

/// Runs every detector on every cell.
///
/// Cell `c` uses the same generator streams for every detector. Failures of a
/// cell (for instance too few detections for a delay estimate) are collected
/// and the remaining cells still run.
pub fn run_grid(cfg: &GridConfig) -> Result<GridReport> {
    cfg.validate()?;
    let base = match &cfg.base {
        Some(b) => b.clone(),
        None => random_correlation(cfg.dim, cfg.alpha_d, &mut task_rng(cfg.seed, BASE_STREAM))?,
    };
    let dim = base.dim();
    let mut cache: HashMap<(usize, Option<usize>), std::result::Result<ResolvedEntry, String>> = HashMap::new();
    let mut thresholds = ThresholdCache::default();
    let mut rows = Vec::new();
    let mut failures = Vec::new();

    for (c, cell) in cfg.cells.iter().enumerate() {
        let master = task_rng(cfg.seed, CELL_STREAM + c as u64).next_u64();
        for (j, det) in cfg.detectors.iter().enumerate() {
            let key = (j, cell.change_type.map(ChangeType::index));
            let entry = cache
                .entry(key)
                .or_insert_with(|| {
                    resolve_entry(cfg, &base, j, det, cell.change_type, &mut thresholds).map_err(|e| e.to_string())
                })
                .clone();
            let mut row = GridRow {
                cell: c,
                detector: det.label().into(),
                parameter: det.parameter(),
                change_type: cell.change_type.map_or("none", ChangeType::name).into(),
                sparsity: if cell.change_type.is_some() { cell.sparsity } else { 0 },
                size: cell.change_type.map(|_| cell.size),
                streams: 0,
                threshold: None,
                edd: None,
                edd_lower: None,
                ci_low: None,
                ci_high: None,
                detections: 0,
                censored: 0,
                false_alarms: 0,
                pfa: None,
                pfa_low: None,
                pfa_high: None,
                replicates: cfg.replicates,
            };
            let mut fail = |error: String| {
                failures.push(CellFailure {
                    cell: c,
                    detector: det.label().into(),
                    parameter: det.parameter(),
                    error,
                })
            };
            let entry = match entry {
                Ok(e) => e,
                Err(e) => {
                    fail(e);
                    rows.push(row);
                    continue;
                }
            };
            let threshold = entry.threshold.unwrap_or(f64::INFINITY);
            row.threshold = Some(threshold);
            row.streams = match &entry.resolved.projection {
                Projection::Identity => dim,
                Projection::Axes(a) => a.len(),
            };
            let horizon = if cell.change_type.is_some() { cfg.n * cfg.horizon_factor } else { cfg.n };
            let template = TrialTemplate {
                base: base.clone(),
                m: cfg.m,
                horizon,
                window: cfg.window,
                kappa: cfg.kappa,
            };
            let outcomes = match replicate_trials(&template, &entry.resolved, &cell.draw(), cfg.replicates, master, threshold) {
                Ok(o) => o,
                Err(e) => {
                    fail(e.to_string());
                    rows.push(row);
                    continue;
                }
            };
            row.detections = outcomes.iter().filter(|o| o.delay().is_some()).count();
            row.censored = outcomes.iter().filter(|o| o.censored()).count();
            row.false_alarms = outcomes.iter().filter(|o| o.false_alarm()).count();
            if cell.change_type.is_some() {
                row.edd_lower = truncated_mean_delay(&outcomes);
                match estimate_edd(&outcomes) {
                    Ok(e) => {
                        row.edd = Some(e.edd);
                        row.ci_low = Some(e.ci_low);
                        row.ci_high = Some(e.ci_high);
                    }
                    Err(e) => fail(e.to_string()),
                }
            } else {
                match estimate_pfa(&outcomes, cfg.n) {
                    Ok(p) => {
                        row.pfa = Some(p.estimate);
                        row.pfa_low = Some(p.lower);
                        row.pfa_high = Some(p.upper);
                    }
                    Err(e) => fail(e.to_string()),
                }
            }
            rows.push(row);
        }
    }

    let mut resolved: Vec<_> = cache.into_iter().filter_map(|(k, v)| v.ok().map(|e| (k, e))).collect();
    resolved.sort_by_key(|(k, _)| *k);
    Ok(GridReport {
        config: cfg.clone(),
        base,
        resolved: resolved.into_iter().map(|(_, e)| e).collect(),
        rows,
        failures,
    })
}

/// Thresholds by monitored streams and `p0`, so detectors that monitor the
/// same streams share one calibration.
#[derive(Default)]
struct ThresholdCache {
    entries: Vec<(Projection, u64, std::result::Result<f64, Error>)>,
}

impl ThresholdCache {
    fn get(&mut self, cfg: &GridConfig, base: &CorrelationMatrix, det: &ResolvedDetector) -> Result<f64> {
        let key = det.p0.to_bits();
        if let Some((_, _, b)) = self.entries.iter().find(|(p, k, _)| *p == det.projection && *k == key) {
            return b.clone();
        }
        let mut rng = task_rng(cfg.seed, CALIBRATE_STREAM + self.entries.len() as u64);
        let b = calibrate_detector(base, cfg.m, det, &cfg.calibration_config(), &mut rng).map(|c| c.threshold);
        self.entries.push((det.projection.clone(), key, b.clone()));
        b
    }
}

fn resolve_entry(
    cfg: &GridConfig,
    base: &CorrelationMatrix,
    j: usize,
    det: &Detector,
    ctype: Option<ChangeType>,
    thresholds: &mut ThresholdCache,
) -> Result<ResolvedEntry> {
    let stream = 4 * j as u64 + ctype.map_or(3, |t| t.index() as u64);
    let spec = cfg.tailoring_spec(ctype);
    let resolved = det.resolve(base, &spec, cfg.tailor_draws, &mut task_rng(cfg.seed, RESOLVE_STREAM + stream))?;
    let threshold = match cfg.threshold {
        ThresholdChoice::Fixed(b) => b,
        ThresholdChoice::Calibrate => thresholds.get(cfg, base, &resolved)?,
    };
    Ok(ResolvedEntry {
        change_type: ctype,
        resolved,
        threshold: Some(threshold),
    })
}
