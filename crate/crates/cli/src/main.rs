//! `tpca`: tailoring, calibration, monitoring and simulation from files.

mod commands;
mod error;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tpca", version, about = "Sparse change detection with tailored principal-axis projections")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "TPCA_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Parametric,
    Block,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Select the projections most likely to carry a change.
    Tailor {
        /// Training data CSV (rows are time steps, columns streams).
        #[arg(long)]
        training: PathBuf,
        /// Change distribution JSON; defaults are used when omitted.
        #[arg(long)]
        change_spec: Option<PathBuf>,
        /// Cumulative argmax-probability cutoff.
        #[arg(long, default_value_t = 0.9)]
        cutoff: f64,
        /// Monte Carlo draws of the change distribution.
        #[arg(long, default_value_t = tpca::tailor::DEFAULT_DRAWS)]
        draws: usize,
        /// Lag extension order.
        #[arg(long, default_value_t = 0)]
        lag: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file (`-` for stdout).
        #[arg(long, short, default_value = "selection.json")]
        out: PathBuf,
    },
    /// Calibrate the alarm threshold by simulating no-change runs.
    Calibrate {
        #[arg(long)]
        training: PathBuf,
        /// Selection JSON written by `tailor`.
        #[arg(long)]
        selection: PathBuf,
        /// Target false alarm probability within `n` steps.
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
        /// Monitoring horizon.
        #[arg(long, short, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        /// Simulated runs.
        #[arg(long, default_value_t = 2000)]
        replicates: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Parametric)]
        mode: ModeArg,
        /// Block length for the block bootstrap (default max(25, 2l + 2)).
        #[arg(long)]
        block_len: Option<usize>,
        #[arg(long, default_value_t = 1.0)]
        p0: f64,
        #[arg(long, default_value_t = tpca::mixmonitor::DEFAULT_WINDOW)]
        window: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, short, default_value = "calibration.json")]
        out: PathBuf,
    },
    /// Monitor a stream and report alarms as JSON lines.
    Monitor {
        /// Stream CSV (`-` for stdin).
        #[arg(long, default_value = "-")]
        stream: PathBuf,
        #[arg(long)]
        selection: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        /// Override the calibrated `p0`.
        #[arg(long)]
        p0: Option<f64>,
        /// Override the calibrated window.
        #[arg(long)]
        window: Option<usize>,
        /// Keep monitoring after the first alarm.
        #[arg(long = "continue")]
        keep_going: bool,
        #[arg(long, short, default_value = "-")]
        out: PathBuf,
    },
    /// Estimate detection delays and false alarm rates over a scenario grid.
    Simulate {
        /// Grid JSON.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, short, default_value = "results.csv")]
        out: PathBuf,
        /// Run manifest with the resolved config and any failed cells
        /// (default: `<out>.manifest.json`).
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Check the bivariate axis-sensitivity rules on a grid.
    VerifyProps {
        #[arg(long, default_value_t = 0.05)]
        resolution: f64,
        /// Additional correlations to check.
        #[arg(long = "rho", allow_negative_numbers = true)]
        extra_rho: Vec<f64>,
        #[arg(long, default_value_t = 1e-6)]
        boundary_tol: f64,
        #[arg(long, short, default_value = "props_report.json")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Tailor {
            training,
            change_spec,
            cutoff,
            draws,
            lag,
            seed,
            out,
        } => commands::tailor(&commands::TailorArgs {
            training,
            change_spec,
            cutoff,
            draws,
            lag,
            seed,
            out,
        }),
        Command::Calibrate {
            training,
            selection,
            alpha,
            n,
            confidence,
            replicates,
            mode,
            block_len,
            p0,
            window,
            seed,
            out,
        } => commands::calibrate(&commands::CalibrateArgs {
            training,
            selection,
            alpha,
            n,
            confidence,
            replicates,
            mode,
            block_len,
            p0,
            window,
            seed,
            out,
        }),
        Command::Monitor {
            stream,
            selection,
            calibration,
            p0,
            window,
            keep_going,
            out,
        } => commands::monitor(&commands::MonitorArgs {
            stream,
            selection,
            calibration,
            p0,
            window,
            keep_going,
            out,
        }),
        Command::Simulate { grid, out, manifest } => commands::simulate(&grid, &out, manifest.as_deref()),
        Command::VerifyProps {
            resolution,
            extra_rho,
            boundary_tol,
            out,
        } => commands::verify_props(resolution, extra_rho, boundary_tol, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_line());
            ExitCode::from(e.exit_code as u8)
        }
    }
}
