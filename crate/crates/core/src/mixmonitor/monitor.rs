use std::collections::VecDeque;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::stats::{llr_from_variances, mixture_term, BartlettCache, VAR_FLOOR};
use super::{MonitorModel, StreamTraining};
use crate::error::{Error, Result};

/// Default window: candidate change-points up to `w + 1` steps back.
pub const DEFAULT_WINDOW: usize = 200;

/// Run-time parameters of the stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    pub p0: f64,
    pub window: usize,
    /// Alarm threshold `b`; `+∞` (serialized as `null`) never alarms.
    #[serde(with = "inf_as_null")]
    pub threshold: f64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            p0: 1.0,
            window: DEFAULT_WINDOW,
            threshold: f64::INFINITY,
        }
    }
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(Error::InvalidConfig(format!("p0 must lie in (0, 1], got {}", self.p0)));
        }
        if self.window < 2 {
            return Err(Error::InvalidConfig(format!("window must be at least 2, got {}", self.window)));
        }
        if self.threshold.is_nan() {
            return Err(Error::InvalidConfig("threshold is NaN".into()));
        }
        Ok(())
    }
}

mod inf_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod neg_inf_as_null {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

/// Outcome of one monitored step.
///
/// `stat` is `−∞` (serialized as `null`) while no candidate change-point is
/// admissible. `warnings` counts candidate splits skipped at this step because a segment
/// variance fell below [`VAR_FLOOR`](super::VAR_FLOOR); such a split adds
/// nothing to the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub t: usize,
    #[serde(with = "neg_inf_as_null")]
    pub stat: f64,
    pub argmax_k: Option<usize>,
    pub alarm: bool,
    pub warnings: u32,
}

#[derive(Debug, Clone)]
struct StreamState {
    anchor: StreamTraining,
    buf: VecDeque<f64>,
}

impl StreamState {
    fn evict(&mut self) {
        if let Some(v) = self.buf.pop_front() {
            let a = &mut self.anchor;
            a.n += 1;
            let delta = v - a.mean;
            a.mean += delta / a.n as f64;
            a.m2 += delta * (v - a.mean);
        }
    }
}

/// Streaming state of the stopping rule for one run.
///
/// Each stream keeps an anchor (training values plus values that left the
/// window, as count, mean and centred sum of squares) and the last `w + 1`
/// monitored values. Window sums are rebuilt from the buffer, centred on the
/// anchor mean, at every step.
#[derive(Debug, Clone)]
pub struct Monitor<'a> {
    model: &'a MonitorModel,
    cfg: MonitorConfig,
    history: VecDeque<Vec<f64>>,
    streams: Vec<StreamState>,
    t: usize,
    raw_steps: usize,
    warnings: u64,
    ops: u64,
    cache: BartlettCache,
    z: Vec<f64>,
    acc: Vec<f64>,
    p1: Vec<f64>,
    p2: Vec<f64>,
    ext: Vec<f64>,
}

impl<'a> Monitor<'a> {
    pub fn new(model: &'a MonitorModel, cfg: MonitorConfig) -> Result<Self> {
        cfg.validate()?;
        if model.training_len() < 2 {
            return Err(Error::InvalidConfig("monitor needs at least two training observations".into()));
        }
        let cap = cfg.window + 2;
        Ok(Self {
            model,
            cfg,
            history: VecDeque::with_capacity(model.lag + 1),
            streams: model
                .streams
                .iter()
                .map(|&anchor| StreamState {
                    anchor,
                    buf: VecDeque::with_capacity(cap),
                })
                .collect(),
            t: 0,
            raw_steps: 0,
            warnings: 0,
            ops: 0,
            cache: BartlettCache::default(),
            z: Vec::with_capacity(model.num_streams()),
            acc: Vec::with_capacity(cap),
            p1: Vec::with_capacity(cap),
            p2: Vec::with_capacity(cap),
            ext: Vec::with_capacity(model.dim()),
        })
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.cfg
    }

    /// Monitored steps so far.
    pub fn time(&self) -> usize {
        self.t
    }

    /// Raw observations consumed so far, including lag warm-up.
    pub fn raw_steps(&self) -> usize {
        self.raw_steps
    }

    /// Skipped degenerate splits over the whole run.
    pub fn total_warnings(&self) -> u64 {
        self.warnings
    }

    /// Stream-by-candidate evaluations performed so far.
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    /// Consumes one raw observation. Returns `None` while the lag history is
    /// still filling.
    pub fn observe(&mut self, x: &[f64]) -> Result<Option<StepResult>> {
        let model = self.model;
        if x.len() != model.raw_dim {
            return Err(Error::DimensionMismatch {
                expected: model.raw_dim,
                found: x.len(),
            });
        }
        self.raw_steps += 1;
        if model.lag == 0 {
            let mut z = std::mem::take(&mut self.z);
            model.project_into(x, &mut z)?;
            let out = self.step_projected(&z);
            self.z = z;
            return out.map(Some);
        }
        if self.history.len() == model.lag + 1 {
            self.history.pop_front();
        }
        self.history.push_back(x.to_vec());
        if self.history.len() < model.lag + 1 {
            return Ok(None);
        }
        self.ext.clear();
        for row in &self.history {
            self.ext.extend_from_slice(row);
        }
        let mut z = std::mem::take(&mut self.z);
        model.project_into(&self.ext, &mut z)?;
        let out = self.step_projected(&z);
        self.z = z;
        out.map(Some)
    }

    /// Advances by one already projected observation `z` (one value per
    /// monitored stream).
    pub fn step_projected(&mut self, z: &[f64]) -> Result<StepResult> {
        if z.len() != self.streams.len() {
            return Err(Error::DimensionMismatch {
                expected: self.streams.len(),
                found: z.len(),
            });
        }
        let w = self.cfg.window;
        for (s, &v) in self.streams.iter_mut().zip(z) {
            s.buf.push_back(v);
            if s.buf.len() > w + 1 {
                s.evict();
            }
        }
        self.t += 1;
        let t = self.t;
        if t < 2 {
            return Ok(StepResult {
                t,
                stat: f64::NEG_INFINITY,
                argmax_k: None,
                alarm: false,
                warnings: 0,
            });
        }

        let len = self.streams[0].buf.len();
        let na0 = self.streams[0].anchor.n;
        let candidates = len - 1;
        let p0 = self.cfg.p0;
        let mut corr = Vec::with_capacity(candidates);
        for i in 0..candidates {
            corr.push(1.0 / self.cache.correction(na0 + i, len - i));
        }
        self.acc.clear();
        self.acc.resize(candidates, 0.0);
        let mut warnings = 0u32;

        for s in &self.streams {
            let a = s.anchor;
            self.p1.clear();
            self.p2.clear();
            self.p1.push(0.0);
            self.p2.push(0.0);
            let (mut c1, mut c2) = (0.0, 0.0);
            for &v in &s.buf {
                let d = v - a.mean;
                c1 += d;
                c2 += d * d;
                self.p1.push(c1);
                self.p2.push(c2);
            }
            let nt = (a.n + len) as f64;
            let vt = (a.m2 + c2 - c1 * c1 / nt) / nt;
            for i in 0..candidates {
                let na = (a.n + i) as f64;
                let va = (a.m2 + self.p2[i] - self.p1[i] * self.p1[i] / na) / na;
                let nb = (len - i) as f64;
                let s1 = c1 - self.p1[i];
                let vb = (c2 - self.p2[i] - s1 * s1 / nb) / nb;
                // a degenerate segment carries no usable evidence for this split
                if va < VAR_FLOOR || vb < VAR_FLOOR || vt < VAR_FLOOR {
                    warnings += 1;
                    continue;
                }
                let l = llr_from_variances(na, va, nb, vb, vt);
                self.acc[i] += mixture_term(l * corr[i], p0);
            }
            self.ops += candidates as u64;
        }

        let mut best = 0;
        for i in 1..candidates {
            if self.acc[i] > self.acc[best] {
                best = i;
            }
        }
        let stat = self.acc[best];
        self.warnings += u64::from(warnings);
        Ok(StepResult {
            t,
            stat,
            argmax_k: Some(t - len + best),
            alarm: stat >= self.cfg.threshold,
            warnings,
        })
    }
}

/// Result of [`run_monitor`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// First alarm time in monitored steps; `None` if the stream ended first.
    pub stopping_time: Option<usize>,
    /// Raw observations consumed up to and including the alarm.
    pub raw_steps: usize,
    pub trace: Vec<StepResult>,
    pub warnings: u64,
}

/// Runs the stopping rule over `stream` until the first alarm or the end of
/// the stream.
pub fn run_monitor<I, V>(model: &MonitorModel, cfg: MonitorConfig, stream: I) -> Result<RunOutcome>
where
    I: IntoIterator<Item = V>,
    V: AsRef<[f64]>,
{
    let mut mon = Monitor::new(model, cfg)?;
    let mut trace = Vec::new();
    for x in stream {
        if let Some(step) = mon.observe(x.as_ref())? {
            trace.push(step);
            if step.alarm {
                return Ok(RunOutcome {
                    stopping_time: Some(step.t),
                    raw_steps: mon.raw_steps(),
                    trace,
                    warnings: mon.total_warnings(),
                });
            }
        }
    }
    Ok(RunOutcome {
        stopping_time: None,
        raw_steps: mon.raw_steps(),
        trace,
        warnings: mon.total_warnings(),
    })
}
