//! Runs every training cell of a sweep, resuming from finished run files.

use std::fs;
use std::path::{Path, PathBuf};

use csi_core::channel::{ChannelType, Snr};
use csi_core::rng::derive;
use csi_core::task::{build_split, Split};
use csi_core::trainer::{checkpoint_save, train, EvalSet, RunRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::report::{write_report, EvalReport, ReportFormat};
use crate::spec::{SweepSpec, TestPoint, TrainCell};

fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

fn digest_u64(text: &str) -> u64 {
    u64::from_le_bytes(digest(text)[..8].try_into().unwrap())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Seed of the model trained at `cell`.
pub fn cell_seed(master: u64, cell: &TrainCell) -> u64 {
    let text = format!(
        "cell|{}|{}|{}|{}|{}",
        cell.model, cell.channel, cell.fc_hz, cell.v_train, cell.snr_train
    );
    derive(master, digest_u64(&text))
}

/// Seed of a dataset; independent of the model so every model sees the same data.
fn data_seed(master: u64, split: &str, channel: ChannelType, fc_hz: f64, v: f64, snr: Snr) -> u64 {
    derive(master, digest_u64(&format!("{split}|{channel}|{fc_hz}|{v}|{snr}")))
}

/// Everything that determines a cell's result; hashed for resumption.
#[derive(Serialize)]
struct CellKey<'a> {
    cell: &'a TrainCell,
    spec: &'a SweepSpec,
}

pub fn cell_key(spec: &SweepSpec, cell: &TrainCell) -> Result<String> {
    let neutral = SweepSpec {
        out_dir: PathBuf::new(),
        parallelism: 1,
        ..spec.clone()
    };
    let text = serde_json::to_string(&CellKey { cell, spec: &neutral })?;
    Ok(hex(&digest(&text)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellResult {
    Completed { record: RunRecord },
    Failed { error: String },
}

/// Contents of one run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub cell: TrainCell,
    pub key: String,
    pub seed: u64,
    pub test_points: Vec<TestPoint>,
    pub result: CellResult,
}

impl CellOutcome {
    pub fn record(&self) -> Option<&RunRecord> {
        match &self.result {
            CellResult::Completed { record } => Some(record),
            CellResult::Failed { .. } => None,
        }
    }
}

pub fn runs_dir(out: &Path) -> PathBuf {
    out.join("runs")
}

fn run_stem(cell: &TrainCell, key: &str) -> String {
    format!(
        "{}-{}-{}-v{}-snr{}-{}",
        cell.model,
        cell.channel,
        cell.fc_hz,
        cell.v_train,
        cell.snr_train,
        &key[..16]
    )
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn existing_outcome(path: &Path, key: &str) -> Option<CellOutcome> {
    let outcome: CellOutcome = read_json(path).ok()?;
    (outcome.key == key && outcome.record().is_some()).then_some(outcome)
}

/// Trains and evaluates one cell, writing its run file and checkpoint.
pub fn run_cell(spec: &SweepSpec, cell: &TrainCell) -> Result<CellOutcome> {
    let key = cell_key(spec, cell)?;
    let stem = run_stem(cell, &key);
    let dir = runs_dir(&spec.out_dir);
    let run_path = dir.join(format!("{stem}.json"));
    if let Some(done) = existing_outcome(&run_path, &key) {
        log::info!("skipping finished cell {stem}");
        return Ok(done);
    }
    let seed = cell_seed(spec.seed, cell);
    let (n_train, n_test) = spec.sizes();
    let points = spec.test_points();
    log::info!("training cell {stem}");

    let scenario = spec.scenario(cell.channel, cell.fc_hz, cell.v_train, cell.snr_train);
    let train_seed = data_seed(spec.seed, "train", cell.channel, cell.fc_hz, cell.v_train, cell.snr_train);
    let train_set = build_split(&scenario, n_train, train_seed, Split::Train, spec.pairs, 1)?;
    let evals = points
        .iter()
        .map(|p| {
            let scenario = spec.scenario(cell.channel, cell.fc_hz, p.v_test, p.snr_test);
            let seed = data_seed(spec.seed, "test", cell.channel, cell.fc_hz, p.v_test, p.snr_test);
            Ok(EvalSet {
                name: p.name(),
                samples: build_split(&scenario, n_test, seed, Split::Test, spec.pairs, 1)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let result = match train(&spec.train.config(cell.model, seed), &train_set, &evals) {
        Ok((model, record)) => {
            checkpoint_save(&model, &dir.join(format!("{stem}.ckpt")))?;
            CellResult::Completed { record }
        }
        Err(e @ (csi_core::Error::Diverged { .. } | csi_core::Error::Numeric(_))) => {
            log::warn!("cell {stem} failed: {e}");
            CellResult::Failed { error: e.to_string() }
        }
        Err(e) => return Err(e.into()),
    };
    let outcome = CellOutcome {
        cell: *cell,
        key,
        seed,
        test_points: points,
        result,
    };
    write_atomic(&run_path, serde_json::to_string_pretty(&outcome)?.as_bytes())?;
    Ok(outcome)
}

/// Reads the finished run file of every cell without training anything.
pub fn load_outcomes(spec: &SweepSpec) -> Result<Vec<CellOutcome>> {
    let dir = runs_dir(&spec.out_dir);
    spec.train_cells()
        .iter()
        .map(|cell| {
            let key = cell_key(spec, cell)?;
            let path = dir.join(format!("{}.json", run_stem(cell, &key)));
            let outcome: CellOutcome = read_json(&path)?;
            if outcome.key != key {
                return Err(CliError::Report(format!("{} belongs to a different spec", path.display())));
            }
            Ok(outcome)
        })
        .collect()
}

pub fn save_spec(spec: &SweepSpec) -> Result<()> {
    let path = spec.out_dir.join("spec.json");
    write_atomic(&path, serde_json::to_string_pretty(spec)?.as_bytes())
}

pub fn load_spec(out: &Path) -> Result<SweepSpec> {
    let mut spec: SweepSpec = read_json(&out.join("spec.json"))?;
    spec.out_dir = out.to_path_buf();
    spec.validate()?;
    Ok(spec)
}

/// Trains every cell (in parallel up to `spec.parallelism`), then writes
/// `report.csv` and `report.json` into the output directory.
pub fn run_sweep(spec: &SweepSpec) -> Result<EvalReport> {
    spec.validate()?;
    let dir = runs_dir(&spec.out_dir);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    save_spec(spec)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))?;
    let cells = spec.train_cells();
    let outcomes = pool.install(|| {
        cells
            .par_iter()
            .map(|c| run_cell(spec, c))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = EvalReport::from_outcomes(&outcomes)?;
    write_report(&report, &spec.out_dir, ReportFormat::Csv)?;
    write_report(&report, &spec.out_dir, ReportFormat::Json)?;
    Ok(report)
}
