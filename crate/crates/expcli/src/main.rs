use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use csi_core::channel::ScenarioConfig;
use csi_expcli::gridgen::gridgen;
use csi_expcli::{
    load_outcomes, load_spec, loss_drop_check, run_sweep, trend_check, CliError, EvalReport,
    ReportFormat, Result, SweepSpec,
};

/// Single-layer attention vs. state-space CSI prediction benchmark.
#[derive(Parser)]
#[command(name = "csibench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every cell of a sweep (resumes finished cells).
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        parallelism: Option<usize>,
    },
    /// Rebuild the report of a finished sweep.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Evaluate the qualitative trends on a finished sweep.
    Check {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Export the slots of one scenario as a CSIG container.
    Gridgen {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        slots: usize,
        /// Add noise at the scenario SNR.
        #[arg(long)]
        noisy: bool,
    },
}

const EXIT_TREND: u8 = 3;

fn seed_override() -> Result<Option<u64>> {
    match std::env::var("CSI_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Config(format!("CSI_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn finished_report(dir: &Path) -> Result<(SweepSpec, EvalReport)> {
    let spec = load_spec(dir)?;
    let outcomes = load_outcomes(&spec)?;
    Ok((spec, EvalReport::from_outcomes(&outcomes)?))
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Sweep { spec, out, parallelism } => {
            let mut spec = SweepSpec::from_json(&read(&spec)?)?;
            if let Some(seed) = seed_override()? {
                spec.seed = seed;
            }
            if let Some(out) = out {
                spec.out_dir = out;
            }
            if let Some(p) = parallelism {
                spec.parallelism = p;
            }
            let report = run_sweep(&spec)?;
            println!(
                "{} rows written to {}",
                report.rows.len(),
                spec.out_dir.join("report.csv").display()
            );
            Ok(0)
        }
        Command::Report { dir, format } => {
            let (_, report) = finished_report(&dir)?;
            let format = match format {
                Format::Csv => ReportFormat::Csv,
                Format::Json => ReportFormat::Json,
            };
            let path = csi_expcli::report::write_report(&report, &dir, format)?;
            println!("{}", path.display());
            Ok(0)
        }
        Command::Check { dir } => {
            let spec = load_spec(&dir)?;
            let outcomes = load_outcomes(&spec)?;
            let report = EvalReport::from_outcomes(&outcomes)?;
            let mut summary = trend_check(&report)?;
            summary.checks.extend(loss_drop_check(&outcomes));
            print!("{}", summary.table());
            Ok(if summary.passed() { 0 } else { EXIT_TREND })
        }
        Command::Gridgen { scenario, out, slots, noisy } => {
            let mut cfg: ScenarioConfig = serde_json::from_str(&read(&scenario)?)
                .map_err(|e| CliError::Config(format!("invalid scenario: {e}")))?;
            if let Some(seed) = seed_override()? {
                cfg.seed = seed;
            }
            let meta = gridgen(&cfg, &out, slots, noisy)?;
            println!("{} grids of shape {:?} written to {}", meta.slots.len(), meta.shape, out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
