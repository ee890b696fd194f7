//! Simulation harness: single trials, detection delay and false alarm
//! estimates, scenario grids and the bivariate sensitivity checks.
//!
//! A trial draws `m` training rows from `N(0, Σ₀)`, fits the detector's model,
//! then monitors rows from `N(0, Σ₀)` up to the change-point `κ` and from the
//! post-change distribution afterwards. Replicated trials with the same master
//! seed see the same training sets, changes and noise whatever the detector,
//! so detectors are compared on common random numbers.

mod grid;
mod props;

pub use grid::{
    run_grid, CellFailure, CellSpec, GridConfig, GridReport, GridRow, ResolvedEntry, ThresholdChoice, GRID_SCHEMA,
};
pub use props::{verify_bivariate_propositions, PropositionCheck, PropsConfig, PropsReport, Violation};

use nalgebra::DVector;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{
    calibrate_with_source, CalibrationConfig, CalibrationResult, GaussianSource, ModelTemplate, Proportion,
};
use crate::changemodel::{apply_change, ChangeDistributionSpec, ChangeScenario, ChangeType};
use crate::corrcore::{CorrelationMatrix, DEFAULT_PD_FLOOR};
use crate::error::{Error, Result};
use crate::mixmonitor::{Monitor, MonitorConfig, MonitorModel, Projection};
use crate::rng::{seeded, task_rng};
use crate::tailor::tailor;

/// Smallest number of detections accepted by [`estimate_edd`].
pub const MIN_DETECTIONS: usize = 30;

/// Smallest number of runs accepted by [`estimate_pfa`].
pub const MIN_PFA_RUNS: usize = 100;

/// Detection methods compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Detector {
    /// Tailored axes at cumulative argmax-probability `cutoff`.
    Tpca { cutoff: f64 },
    /// The `count` least varying axes.
    MinPca { count: usize },
    /// The `count` most varying axes.
    MaxPca { count: usize },
    /// Mixture procedure on the standardized raw streams.
    RawMixture { p0: f64 },
}

impl Detector {
    pub fn label(&self) -> &'static str {
        match self {
            Detector::Tpca { .. } => "tpca",
            Detector::MinPca { .. } => "min_pca",
            Detector::MaxPca { .. } => "max_pca",
            Detector::RawMixture { .. } => "raw_mixture",
        }
    }

    /// The method parameter: cutoff, axis count or `p0`.
    pub fn parameter(&self) -> f64 {
        match *self {
            Detector::Tpca { cutoff } => cutoff,
            Detector::MinPca { count } | Detector::MaxPca { count } => count as f64,
            Detector::RawMixture { p0 } => p0,
        }
    }

    /// Monitored streams and `p0` for a pre-change correlation `base`.
    ///
    /// TPCA is tailored to `base` with `spec`; projection detectors monitor
    /// with `p0 = 1`.
    pub fn resolve<R: Rng + ?Sized>(
        &self,
        base: &CorrelationMatrix,
        spec: &ChangeDistributionSpec,
        draws: usize,
        rng: &mut R,
    ) -> Result<ResolvedDetector> {
        let d = base.dim();
        let check_count = |count: usize| {
            if count == 0 || count > d {
                Err(Error::InvalidConfig(format!("axis count {count} outside 1..={d}")))
            } else {
                Ok(())
            }
        };
        let (projection, p0) = match *self {
            Detector::Tpca { cutoff } => {
                let sel = tailor(base, spec, cutoff, draws, rng)?;
                (Projection::Axes(sel.indices()), 1.0)
            }
            Detector::MinPca { count } => {
                check_count(count)?;
                (Projection::Axes((d - count..d).collect()), 1.0)
            }
            Detector::MaxPca { count } => {
                check_count(count)?;
                (Projection::Axes((0..count).collect()), 1.0)
            }
            Detector::RawMixture { p0 } => (Projection::Identity, p0),
        };
        Ok(ResolvedDetector {
            detector: *self,
            projection,
            p0,
        })
    }
}

/// A detector with its monitored streams fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedDetector {
    pub detector: Detector,
    pub projection: Projection,
    pub p0: f64,
}

/// One simulated monitoring run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub base: CorrelationMatrix,
    pub m: usize,
    /// Number of monitored observations before the run is censored.
    pub horizon: usize,
    pub window: usize,
    /// Change-point: observations `1..=kappa` are pre-change.
    pub kappa: usize,
    pub projection: Projection,
    pub p0: f64,
    /// `None` runs under no change.
    pub scenario: Option<ChangeScenario>,
    pub seed: u64,
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scenario.is_some() && self.kappa >= self.horizon {
            return Err(Error::InvalidConfig(format!(
                "change-point {} must precede the horizon {}",
                self.kappa, self.horizon
            )));
        }
        if self.m < 2 {
            return Err(Error::InvalidConfig(format!("training length {} is below 2", self.m)));
        }
        Ok(())
    }

    /// Effective change-point; runs without a change never leave `H₀`.
    fn change_point(&self) -> usize {
        if self.scenario.is_some() {
            self.kappa
        } else {
            self.horizon
        }
    }
}

/// Result of a trial: an alarm time or censoring at the horizon.
///
/// Exactly one of [`delay`](Self::delay), [`false_alarm`](Self::false_alarm)
/// and [`censored`](Self::censored) applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub stopping_time: Option<usize>,
    pub kappa: usize,
    pub horizon: usize,
}

impl TrialOutcome {
    pub fn delay(&self) -> Option<usize> {
        self.stopping_time.filter(|&t| t > self.kappa).map(|t| t - self.kappa)
    }

    pub fn false_alarm(&self) -> bool {
        matches!(self.stopping_time, Some(t) if t <= self.kappa)
    }

    pub fn censored(&self) -> bool {
        self.stopping_time.is_none()
    }
}

/// Runs one trial against threshold `b`.
pub fn run_trial(spec: &TrialSpec, threshold: f64) -> Result<TrialOutcome> {
    spec.validate()?;
    let d = spec.base.dim();
    let mut rng = seeded(spec.seed);
    let pre = GaussianSource::new(DVector::zeros(d), spec.base.matrix())?;
    let post = match &spec.scenario {
        Some(sc) => {
            let p = apply_change(&spec.base, sc, DEFAULT_PD_FLOOR)?;
            Some(GaussianSource::new(p.mean, &p.cov)?)
        }
        None => None,
    };
    let training = pre.sample(spec.m, &mut rng);
    let model = MonitorModel::fit(&training, &spec.projection, 0)?;
    let cfg = MonitorConfig {
        p0: spec.p0,
        window: spec.window,
        threshold,
    };
    let mut mon = Monitor::new(&model, cfg)?;
    let kappa = spec.change_point();
    let mut scratch = vec![0.0; d];
    let mut x = vec![0.0; d];
    for t in 1..=spec.horizon {
        let src = match &post {
            Some(p) if t > kappa => p,
            _ => &pre,
        };
        src.draw_into(&mut scratch, &mut x, &mut rng);
        if let Some(step) = mon.observe(&x)? {
            if step.alarm {
                return Ok(TrialOutcome {
                    stopping_time: Some(step.t),
                    kappa,
                    horizon: spec.horizon,
                });
            }
        }
    }
    Ok(TrialOutcome {
        stopping_time: None,
        kappa,
        horizon: spec.horizon,
    })
}

/// How each replicate obtains its change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioDraw {
    NoChange,
    Fixed(ChangeScenario),
    /// Common size on `sparsity` streams drawn afresh for every replicate.
    Uniform {
        ctype: ChangeType,
        sparsity: usize,
        size: f64,
    },
}

impl ScenarioDraw {
    pub fn draw<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Result<Option<ChangeScenario>> {
        match self {
            ScenarioDraw::NoChange => Ok(None),
            ScenarioDraw::Fixed(sc) => Ok(Some(sc.clone())),
            ScenarioDraw::Uniform { ctype, sparsity, size } => {
                ChangeScenario::with_uniform_size(*ctype, dim, *sparsity, *size, rng).map(Some)
            }
        }
    }
}

/// Settings shared by the replicates of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTemplate {
    pub base: CorrelationMatrix,
    pub m: usize,
    pub horizon: usize,
    pub window: usize,
    pub kappa: usize,
}

/// `replicates` trials of `detector`; replicate `r` uses the generator
/// `(master, r)` for its change and its data, independently of the detector.
pub fn replicate_trials(
    template: &TrialTemplate,
    detector: &ResolvedDetector,
    draw: &ScenarioDraw,
    replicates: usize,
    master: u64,
    threshold: f64,
) -> Result<Vec<TrialOutcome>> {
    let dim = template.base.dim();
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = task_rng(master, r as u64);
            let scenario = draw.draw(dim, &mut rng)?;
            let spec = TrialSpec {
                base: template.base.clone(),
                m: template.m,
                horizon: template.horizon,
                window: template.window,
                kappa: template.kappa,
                projection: detector.projection.clone(),
                p0: detector.p0,
                scenario,
                seed: rng.next_u64(),
            };
            run_trial(&spec, threshold)
        })
        .collect()
}

/// Calibrates a resolved detector against the true pre-change distribution,
/// with training sets of `m` rows.
pub fn calibrate_detector<R: Rng + ?Sized>(
    base: &CorrelationMatrix,
    m: usize,
    detector: &ResolvedDetector,
    cfg: &CalibrationConfig,
    rng: &mut R,
) -> Result<CalibrationResult> {
    let source = GaussianSource::new(DVector::zeros(base.dim()), base.matrix())?;
    let template = ModelTemplate {
        projection: detector.projection.clone(),
        lag: 0,
    };
    let cfg = CalibrationConfig { p0: detector.p0, ..*cfg };
    calibrate_with_source(&template, &source, m, &cfg, rng)
}

/// Detection delay estimate `E[T − κ | T > κ]` with a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EddEstimate {
    pub edd: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Alarms after the change-point.
    pub detections: usize,
    /// Runs without alarm, counted at the truncated delay `horizon − κ`.
    pub censored: usize,
    /// Alarms at or before the change-point, excluded from the mean.
    pub false_alarms: usize,
    pub trials: usize,
}

impl EddEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

/// Mean delay over runs with `T > κ`, censored runs counted at `horizon − κ`,
/// without the detection-count requirement of [`estimate_edd`]. Censoring
/// makes it a lower bound for the delay. `None` when every run false-alarmed.
pub fn truncated_mean_delay(outcomes: &[TrialOutcome]) -> Option<f64> {
    let delays: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.false_alarm())
        .map(|o| o.delay().unwrap_or(o.horizon.saturating_sub(o.kappa)) as f64)
        .collect();
    (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64)
}

/// Mean delay over runs with `T > κ`; censored runs contribute `horizon − κ`.
pub fn estimate_edd(outcomes: &[TrialOutcome]) -> Result<EddEstimate> {
    let mut delays = Vec::with_capacity(outcomes.len());
    let (mut detections, mut censored, mut false_alarms) = (0, 0, 0);
    for o in outcomes {
        if let Some(d) = o.delay() {
            detections += 1;
            delays.push(d as f64);
        } else if o.censored() {
            censored += 1;
            delays.push(o.horizon.saturating_sub(o.kappa) as f64);
        } else {
            false_alarms += 1;
        }
    }
    if detections < MIN_DETECTIONS {
        return Err(Error::TooFewDetections {
            found: detections,
            required: MIN_DETECTIONS,
        });
    }
    let n = delays.len() as f64;
    let mean = delays.iter().sum::<f64>() / n;
    let var = delays.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0);
    let half = 1.96 * (var / n).sqrt();
    Ok(EddEstimate {
        edd: mean,
        ci_low: mean - half,
        ci_high: mean + half,
        detections,
        censored,
        false_alarms,
        trials: outcomes.len(),
    })
}

/// Fraction of runs alarming within the first `n` monitored observations,
/// with a two-sided 95% Clopper–Pearson interval.
pub fn estimate_pfa(outcomes: &[TrialOutcome], n: usize) -> Result<Proportion> {
    if outcomes.len() < MIN_PFA_RUNS {
        return Err(Error::InvalidConfig(format!(
            "{} runs are too few for a false alarm estimate (need {MIN_PFA_RUNS})",
            outcomes.len()
        )));
    }
    let alarms = outcomes
        .iter()
        .filter(|o| matches!(o.stopping_time, Some(t) if t <= n))
        .count();
    Ok(Proportion::new(alarms, outcomes.len(), 0.95))
}
