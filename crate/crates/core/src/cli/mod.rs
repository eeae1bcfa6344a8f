//! Command-line front end: `simulate`, `run`, `eval` and `report`.

pub mod config;
pub mod eval;
pub mod report;
pub mod run;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::{Mode, PipelineConfig};
pub use eval::{cmd_eval, evaluate, uncorrected_clouds, Metrics, ObjectMetrics, Summary};
pub use report::{build_report, cmd_report, Report};
pub use run::{cmd_run, run_dataset, Measurement, RunInfo, RunOutput, StageTimings};

use crate::error::{Error, Result};
use crate::sim::{export_dataset, simulate, Dataset, Scenario};

/// Simulates `scenario` (a built-in name or `custom:<file>`) and writes it to `out_dir`.
pub fn cmd_simulate(scenario: &str, out_dir: &Path, seed: u64) -> Result<Dataset> {
    let s = Scenario::resolve(scenario)?;
    let ds = simulate(&s, seed)?;
    export_dataset(&ds, out_dir)?;
    Ok(ds)
}

#[derive(Debug, Parser)]
#[command(name = "scanfuse", version, about = "Velocity estimation and motion correction for oscillating-scan lidar")]
pub struct Cli {
    /// Random seed (dataset seed for `simulate`, pipeline seed for `run`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Pipeline configuration file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the configured estimation mode.
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Only print errors.
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Print the default configuration and exit.
    #[arg(long)]
    pub print_defaults: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        /// radial | tangential | turning | rotating_lidar | custom:<file.toml>
        scenario: String,
        out_dir: Option<PathBuf>,
    },
    /// Run the estimation pipeline on a dataset.
    Run { dataset: PathBuf, out_dir: Option<PathBuf> },
    /// Score a run against its dataset and write metrics.json.
    Eval { dataset: PathBuf, run: PathBuf },
    /// Compare metrics files side by side.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
    },
}

fn pick_out(positional: Option<PathBuf>, flag: Option<PathBuf>, fallback: &str) -> Result<PathBuf> {
    match (positional, flag) {
        (Some(a), Some(b)) if a != b => Err(Error::InvalidArgument(format!(
            "output given twice: {} and --out {}",
            a.display(),
            b.display()
        ))),
        (Some(a), _) | (None, Some(a)) => Ok(a),
        (None, None) => Ok(PathBuf::from(fallback)),
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Executes a parsed command line; returns the text to print on success.
pub fn execute(cli: Cli) -> Result<String> {
    if cli.print_defaults {
        return Ok(PipelineConfig::defaults_toml());
    }
    let cfg = load_config(&cli)?;
    let Some(command) = cli.command else {
        return Err(Error::InvalidArgument("no subcommand given (try --help)".into()));
    };
    match command {
        Command::Simulate { scenario, out_dir } => {
            let out = pick_out(out_dir, cli.out, "dataset")?;
            let ds = cmd_simulate(&scenario, &out, cli.seed.unwrap_or(0))?;
            Ok(format!(
                "wrote {} frames of `{}` ({} objects) to {}\n",
                ds.frames.len(),
                ds.manifest.scenario,
                ds.object_ids().len(),
                out.display()
            ))
        }
        Command::Run { dataset, out_dir } => {
            let out = pick_out(out_dir, cli.out, "run")?;
            let info = cmd_run(&dataset, &cfg, &out)?;
            let t = info.timings_ms;
            Ok(format!(
                "{} mode: {} frames -> {}\nper-frame ms: camera_flow {:.3}, point_cloud_optimization {:.3}, kf_tracking {:.3}\n",
                info.mode.as_str(),
                info.frames,
                out.display(),
                t.camera_flow,
                t.point_cloud_optimization,
                t.kf_tracking
            ))
        }
        Command::Eval { dataset, run } => {
            let out = cli.out.unwrap_or_else(|| run.clone());
            let m = cmd_eval(&dataset, &run, &out)?;
            let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.4}"));
            Ok(format!(
                "{} objects; crispness corrected {} / uncorrected {}; velocity rmse {}; mean IOU {}\nwrote {}\n",
                m.objects.len(),
                f(m.summary.crispness_corrected),
                f(m.summary.crispness_uncorrected),
                f(m.summary.velocity_rmse),
                f(m.summary.mean_iou),
                out.join("metrics.json").display()
            ))
        }
        Command::Report { metrics } => Ok(cmd_report(&metrics, cli.out.as_deref())?.to_text()),
    }
}

/// Parses `std::env::args`, runs, prints and returns the process exit code.
pub fn main_entry() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.quiet { "error" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    let quiet = cli.quiet;
    match execute(cli) {
        Ok(text) => {
            if !quiet {
                print!("{text}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
