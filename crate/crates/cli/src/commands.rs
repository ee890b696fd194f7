use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tpca::calibrate::{calibrate_threshold, CalibrationConfig, CalibrationMode, CalibrationResult, ModelTemplate};
use tpca::changemodel::ChangeDistributionSpec;
use tpca::corrcore::{eigensystem, estimate_training};
use tpca::evalharness::{run_grid, verify_bivariate_propositions, CellFailure, GridConfig, PropsConfig, PropsReport};
use tpca::mixmonitor::{lag_extend_rows, Monitor, MonitorConfig, MonitorModel, Projection, StepResult};
use tpca::rng::seeded;
use tpca::tailor::{tailor_lagged, ProjectionSelection};

use crate::error::{exit, CliError, CliResult};
use crate::io::{check_schema, open_input, open_output, read_json, read_matrix, write_json, CsvRows};
use crate::ModeArg;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SELECTION_SCHEMA: &str = "tpca.selection/1";
pub const CHANGE_SPEC_SCHEMA: &str = "tpca.change_spec/1";
pub const CALIBRATION_SCHEMA: &str = "tpca.calibration/1";
pub const ALARMS_SCHEMA: &str = "tpca.alarms/1";
pub const SIMULATION_SCHEMA: &str = "tpca.simulation/1";
pub const PROPS_SCHEMA: &str = "tpca.props/1";

fn display(p: &Path) -> String {
    p.display().to_string()
}

pub struct TailorArgs {
    pub training: PathBuf,
    pub change_spec: Option<PathBuf>,
    pub cutoff: f64,
    pub draws: usize,
    pub lag: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TailorConfig {
    pub training: String,
    pub training_rows: usize,
    pub dim: usize,
    pub change_spec: ChangeDistributionSpec,
    pub cutoff: f64,
    pub draws: usize,
    pub lag: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SelectionDoc {
    pub schema: String,
    pub version: String,
    pub config: TailorConfig,
    pub selection: ProjectionSelection,
    pub model: MonitorModel,
}

fn read_change_spec(path: &Path) -> CliResult<ChangeDistributionSpec> {
    let mut v: Value = read_json(path)?;
    if let Some(obj) = v.as_object_mut() {
        if let Some(s) = obj.remove("schema") {
            check_schema(s.as_str().unwrap_or_default(), CHANGE_SPEC_SCHEMA, &display(path))?;
        }
    }
    serde_json::from_value(v).map_err(|e| CliError::input(format!("{}: {e}", display(path))))
}

pub fn tailor(a: &TailorArgs) -> CliResult<i32> {
    let spec = match &a.change_spec {
        Some(p) => read_change_spec(p)?,
        None => ChangeDistributionSpec::default(),
    };
    let data = read_matrix(&a.training)?;
    let (m, dim) = data.shape();
    spec.validate(dim)?;
    if m <= a.lag + 1 {
        return Err(CliError::input(format!("{m} training rows are too few for lag {}", a.lag)));
    }
    let ext = lag_extend_rows(&data, a.lag)?;
    let summary = estimate_training(&ext)?;
    let selection = tailor_lagged(&summary.corr, &spec, a.cutoff, a.draws, a.lag, &mut seeded(a.seed))?;
    let es = eigensystem(&summary.corr);
    let model = MonitorModel::from_parts(dim, a.lag, &ext, &summary, Some(&es), &Projection::Axes(selection.indices()))?;
    let doc = SelectionDoc {
        schema: SELECTION_SCHEMA.into(),
        version: VERSION.into(),
        config: TailorConfig {
            training: display(&a.training),
            training_rows: m,
            dim,
            change_spec: spec,
            cutoff: a.cutoff,
            draws: a.draws,
            lag: a.lag,
            seed: a.seed,
        },
        selection,
        model,
    };
    write_json(&a.out, &doc)?;
    Ok(exit::OK)
}

pub struct CalibrateArgs {
    pub training: PathBuf,
    pub selection: PathBuf,
    pub alpha: f64,
    pub n: usize,
    pub confidence: f64,
    pub replicates: usize,
    pub mode: ModeArg,
    pub block_len: Option<usize>,
    pub p0: f64,
    pub window: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrateRunConfig {
    pub training: String,
    pub training_rows: usize,
    pub selection: String,
    pub seed: u64,
    /// Resolved calibration settings, block length included.
    pub calibration: CalibrationConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CalibrationDoc {
    pub schema: String,
    pub version: String,
    pub config: CalibrateRunConfig,
    pub raw_dim: usize,
    pub template: ModelTemplate,
    pub result: CalibrationResult,
}

fn read_selection(path: &Path) -> CliResult<SelectionDoc> {
    let doc: SelectionDoc = read_json(path)?;
    check_schema(&doc.schema, SELECTION_SCHEMA, &display(path))?;
    Ok(doc)
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<i32> {
    let sel = read_selection(&a.selection)?;
    let data = read_matrix(&a.training)?;
    if data.ncols() != sel.model.raw_dim {
        return Err(tpca::Error::DimensionMismatch {
            expected: sel.model.raw_dim,
            found: data.ncols(),
        }
        .into());
    }
    let template = ModelTemplate {
        projection: sel.model.projection.clone(),
        lag: sel.model.lag,
    };
    let cfg = CalibrationConfig {
        mode: match a.mode {
            ModeArg::Parametric => CalibrationMode::ParametricNormal,
            ModeArg::Block => CalibrationMode::BlockBootstrap,
        },
        block_len: a.block_len,
        p0: a.p0,
        window: a.window,
        ..CalibrationConfig::new(a.alpha, a.n, a.confidence, a.replicates)
    };
    let result = calibrate_threshold(&template, &data, &cfg, &mut seeded(a.seed))?;
    let doc = CalibrationDoc {
        schema: CALIBRATION_SCHEMA.into(),
        version: VERSION.into(),
        config: CalibrateRunConfig {
            training: display(&a.training),
            training_rows: data.nrows(),
            selection: display(&a.selection),
            seed: a.seed,
            calibration: result.config,
        },
        raw_dim: sel.model.raw_dim,
        template,
        result,
    };
    write_json(&a.out, &doc)?;
    Ok(exit::OK)
}

pub struct MonitorArgs {
    pub stream: PathBuf,
    pub selection: PathBuf,
    pub calibration: PathBuf,
    pub p0: Option<f64>,
    pub window: Option<usize>,
    pub keep_going: bool,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct MonitorRunConfig {
    stream: String,
    selection: String,
    calibration: String,
    p0: f64,
    window: usize,
    threshold: Option<f64>,
    #[serde(rename = "continue")]
    keep_going: bool,
}

#[derive(Debug, Serialize)]
struct AlarmsHeader<'a> {
    schema: &'a str,
    version: &'a str,
    config: MonitorRunConfig,
}

#[derive(Debug, Serialize)]
struct MonitorSummary {
    steps: usize,
    raw_steps: usize,
    first_alarm: Option<usize>,
    alarms: usize,
    warnings: u64,
}

#[derive(Debug, Serialize)]
struct SummaryLine {
    summary: MonitorSummary,
}

fn json_line<T: Serialize>(out: &mut dyn Write, v: &T) -> CliResult<()> {
    serde_json::to_writer(&mut *out, v)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn monitor(a: &MonitorArgs) -> CliResult<i32> {
    let sel = read_selection(&a.selection)?;
    let cal: CalibrationDoc = read_json(&a.calibration)?;
    check_schema(&cal.schema, CALIBRATION_SCHEMA, &display(&a.calibration))?;
    let model = &sel.model;
    if cal.raw_dim != model.raw_dim || cal.template.lag != model.lag || cal.template.projection != model.projection {
        return Err(CliError::input(
            "calibration was produced for a different selection (streams, lag or dimension differ)",
        ));
    }
    let cfg = MonitorConfig {
        p0: a.p0.unwrap_or(cal.result.config.p0),
        window: a.window.unwrap_or(cal.result.config.window),
        threshold: cal.result.threshold,
    };
    let mut mon = Monitor::new(model, cfg)?;
    let mut out = open_output(&a.out)?;
    json_line(
        &mut *out,
        &AlarmsHeader {
            schema: ALARMS_SCHEMA,
            version: VERSION,
            config: MonitorRunConfig {
                stream: display(&a.stream),
                selection: display(&a.selection),
                calibration: display(&a.calibration),
                p0: cfg.p0,
                window: cfg.window,
                threshold: cfg.threshold.is_finite().then_some(cfg.threshold),
                keep_going: a.keep_going,
            },
        },
    )?;
    let mut rows = CsvRows::new(open_input(&a.stream)?);
    let mut first_alarm = None;
    let mut alarms = 0;
    while let Some(x) = rows.next_row()? {
        let step: Option<StepResult> = mon.observe(&x)?;
        if let Some(step) = step {
            json_line(&mut *out, &step)?;
            if step.alarm {
                alarms += 1;
                first_alarm.get_or_insert(step.t);
                if !a.keep_going {
                    break;
                }
            }
        }
    }
    json_line(
        &mut *out,
        &SummaryLine {
            summary: MonitorSummary {
                steps: mon.time(),
                raw_steps: mon.raw_steps(),
                first_alarm,
                alarms,
                warnings: mon.total_warnings(),
            },
        },
    )?;
    Ok(if first_alarm.is_some() { exit::OK } else { exit::NO_ALARM })
}

#[derive(Debug, Serialize)]
struct SimulationManifest<'a> {
    schema: &'a str,
    version: &'a str,
    config: &'a GridConfig,
    results: String,
    rows: usize,
    base: &'a tpca::corrcore::CorrelationMatrix,
    resolved: &'a [tpca::evalharness::ResolvedEntry],
    failures: &'a [CellFailure],
}

pub fn simulate(grid: &Path, out: &Path, manifest: Option<&Path>) -> CliResult<i32> {
    let cfg: GridConfig = read_json(grid)?;
    let report = run_grid(&cfg)?;
    let mut w = csv::Writer::from_writer(open_output(out)?);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let manifest_path = match manifest {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(format!("{}.manifest.json", display(out))),
    };
    write_json(
        &manifest_path,
        &SimulationManifest {
            schema: SIMULATION_SCHEMA,
            version: VERSION,
            config: &report.config,
            results: display(out),
            rows: report.rows.len(),
            base: &report.base,
            resolved: &report.resolved,
            failures: &report.failures,
        },
    )?;
    if report.failures.is_empty() {
        Ok(exit::OK)
    } else {
        eprintln!(
            "{}",
            CliError::numerical(format!(
                "{} cell(s) failed; see {}",
                report.failures.len(),
                manifest_path.display()
            ))
            .to_line()
        );
        Ok(exit::NUMERICAL)
    }
}

#[derive(Debug, Serialize)]
struct PropsDoc<'a> {
    schema: &'a str,
    version: &'a str,
    report: &'a PropsReport,
}

pub fn verify_props(resolution: f64, extra_rho: Vec<f64>, boundary_tol: f64, out: &Path) -> CliResult<i32> {
    let cfg = PropsConfig {
        resolution,
        extra_rho,
        boundary_tol,
    };
    let report = verify_bivariate_propositions(&cfg)?;
    write_json(
        out,
        &PropsDoc {
            schema: PROPS_SCHEMA,
            version: VERSION,
            report: &report,
        },
    )?;
    if report.total_violations == 0 {
        Ok(exit::OK)
    } else {
        eprintln!(
            "{}",
            CliError::numerical(format!("{} sign violation(s); see {}", report.total_violations, display(out))).to_line()
        );
        Ok(exit::NUMERICAL)
    }
}
