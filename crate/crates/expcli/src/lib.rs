//! Experiment driver: sweeps of single-layer attention and state-space
//! predictors over channel scenarios, with CSV/JSON reports and trend checks.

pub mod error;
pub mod gridgen;
pub mod report;
pub mod spec;
pub mod sweep;
pub mod trend;

pub use error::{CliError, Result};
pub use report::{EvalReport, ReportFormat, ReportRow};
pub use spec::{Geometry, SweepSpec, TestPoint, TrainCell, TrainSettings};
pub use sweep::{load_outcomes, load_spec, run_cell, run_sweep, CellOutcome, CellResult};
pub use trend::{loss_drop_check, trend_check, TrendCheck, TrendSummary};
