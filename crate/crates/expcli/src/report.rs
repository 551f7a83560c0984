//! Flat per-(train cell, test point) report with CSV and JSON forms.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csi_core::channel::{ChannelType, Snr};
use csi_core::trainer::ModelKind;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::sweep::{CellOutcome, CellResult};

pub const CSV_HEADER: [&str; 13] = [
    "model", "channel", "fc_hz", "v_train", "snr_train", "v_test", "snr_test", "mse", "mse_copy",
    "mse_zero", "flops_fwd", "seconds", "seed",
];

pub const FLOPS_NOTE: &str = "msa flops_fwd = 4*N*D^2 + 2*N^2*D multiply-accumulates, the sum of the \
     four itemised matrix products (projections, scores, weighted values, output projection); \
     the often quoted closed form 4*N*D^2 + 2*N*D^2 disagrees with that itemisation in its second term";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: ModelKind,
    pub channel: ChannelType,
    pub fc_hz: f64,
    pub v_train: f64,
    pub snr_train: Snr,
    pub v_test: f64,
    pub snr_test: Snr,
    pub mse: f64,
    pub mse_copy: f64,
    pub mse_zero: f64,
    pub flops_fwd: u64,
    pub seconds: f64,
    pub seed: u64,
}

impl ReportRow {
    fn fields(&self) -> [String; 13] {
        [
            self.model.to_string(),
            self.channel.to_string(),
            self.fc_hz.to_string(),
            self.v_train.to_string(),
            self.snr_train.to_string(),
            self.v_test.to_string(),
            self.snr_test.to_string(),
            self.mse.to_string(),
            self.mse_copy.to_string(),
            self.mse_zero.to_string(),
            self.flops_fwd.to_string(),
            self.seconds.to_string(),
            self.seed.to_string(),
        ]
    }

    fn parse(record: &csv::StringRecord) -> Result<Self> {
        if record.len() != CSV_HEADER.len() {
            return Err(CliError::Report(format!("expected 13 fields, got {}", record.len())));
        }
        fn num<T: FromStr>(s: &str, what: &str) -> Result<T> {
            s.parse().map_err(|_| CliError::Report(format!("bad {what} value {s:?}")))
        }
        Ok(Self {
            model: record[0].parse()?,
            channel: record[1].parse()?,
            fc_hz: num(&record[2], "fc_hz")?,
            v_train: num(&record[3], "v_train")?,
            snr_train: record[4].parse()?,
            v_test: num(&record[5], "v_test")?,
            snr_test: record[6].parse()?,
            mse: num(&record[7], "mse")?,
            mse_copy: num(&record[8], "mse_copy")?,
            mse_zero: num(&record[9], "mse_zero")?,
            flops_fwd: num(&record[10], "flops_fwd")?,
            seconds: num(&record[11], "seconds")?,
            seed: num(&record[12], "seed")?,
        })
    }

    /// Row with the wall-clock column cleared.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl FromStr for ReportFormat {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(CliError::Config(format!("unknown report format {other:?}"))),
        }
    }
}

impl EvalReport {
    /// One row per completed cell and test point, in sweep order. Failed
    /// cells contribute a note instead of rows.
    pub fn from_outcomes(outcomes: &[CellOutcome]) -> Result<Self> {
        let mut report = EvalReport {
            rows: Vec::new(),
            notes: vec![FLOPS_NOTE.to_string()],
        };
        for o in outcomes {
            let c = &o.cell;
            let record = match &o.result {
                CellResult::Completed { record } => record,
                CellResult::Failed { error } => {
                    report.notes.push(format!(
                        "failed cell {} {} {} v_train={} snr_train={}: {error}",
                        c.model, c.channel, c.fc_hz, c.v_train, c.snr_train
                    ));
                    continue;
                }
            };
            for p in &o.test_points {
                let trace = record
                    .eval(&p.name())
                    .ok_or_else(|| CliError::Report(format!("run record lacks test set {}", p.name())))?;
                report.rows.push(ReportRow {
                    model: c.model,
                    channel: c.channel,
                    fc_hz: c.fc_hz,
                    v_train: c.v_train,
                    snr_train: c.snr_train,
                    v_test: p.v_test,
                    snr_test: p.snr_test,
                    mse: trace.reported_mse,
                    mse_copy: trace.mse_copy,
                    mse_zero: trace.mse_zero,
                    flops_fwd: record.flops_fwd,
                    seconds: record.seconds,
                    seed: o.seed,
                });
            }
        }
        Ok(report)
    }

    pub fn without_timing(&self) -> Self {
        Self {
            rows: self.rows.iter().map(ReportRow::without_timing).collect(),
            notes: self.notes.clone(),
        }
    }

    /// Header, one line per row, then every note as a `# ` comment line.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.write_record(row.fields())?;
        }
        let mut text = String::from_utf8(w.into_inner().map_err(|e| CliError::Report(e.to_string()))?)
            .expect("csv output is UTF-8");
        for note in &self.notes {
            text.push_str("# ");
            text.push_str(&note.replace('\n', " "));
            text.push('\n');
        }
        Ok(text)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let notes = text
            .lines()
            .filter_map(|l| l.strip_prefix("# "))
            .map(str::to_string)
            .collect();
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(CliError::Report(format!("unexpected CSV header {header:?}")));
        }
        let rows = r
            .records()
            .map(|rec| ReportRow::parse(&rec?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows, notes })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn emit(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Json => self.to_json(),
        }
    }
}

/// Writes `report.<ext>` into `dir` and returns its path.
pub fn write_report(report: &EvalReport, dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    if report.rows.is_empty() {
        return Err(CliError::Report("refusing to emit an empty report".into()));
    }
    let path = dir.join(format!("report.{}", format.extension()));
    let mut f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    f.write_all(report.emit(format)?.as_bytes())
        .map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn row(model: ModelKind, v_train: f64, v_test: f64, snr_test: f64, mse: f64) -> ReportRow {
        ReportRow {
            model,
            channel: ChannelType::Umi,
            fc_hz: 5e9,
            v_train,
            snr_train: Snr::Db(30.0),
            v_test,
            snr_test: Snr::Db(snr_test),
            mse,
            mse_copy: 0.1 + mse / 3.0,
            mse_zero: 1.0 / 3.0,
            flops_fwd: 1_217_664,
            seconds: 0.123456789,
            seed: u64::MAX - 7,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut r = EvalReport::default();
        r.notes.push(FLOPS_NOTE.into());
        r.rows.push(row(ModelKind::Msa, 0.0, 0.0, -30.0, 0.1 + 0.2));
        r.rows.push(ReportRow {
            snr_train: Snr::All,
            snr_test: Snr::NOISELESS,
            ..row(ModelKind::SsmSelective, 30.0, 10.0, 0.0, 1e-300)
        });
        let text = r.to_csv().unwrap();
        assert!(text.starts_with(&CSV_HEADER.join(",")));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3);
        assert!(text.contains(",all,"));
        assert_eq!(EvalReport::from_csv(&text).unwrap(), r);
        assert_eq!(EvalReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(EvalReport::from_csv("a,b\n1,2\n").is_err());
        let mut text = CSV_HEADER.join(",");
        text.push_str("\nmsa,UMi,5e9,0,30,0,30,x,1,1,1,1,1\n");
        assert!(EvalReport::from_csv(&text).is_err());
    }

    #[test]
    fn empty_report_is_not_written() {
        let dir = tempfile::tempdir().unwrap();
        assert!(write_report(&EvalReport::default(), dir.path(), ReportFormat::Csv).is_err());
    }
}
