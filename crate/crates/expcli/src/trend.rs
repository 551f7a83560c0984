//! Qualitative trend assertions over a finished report.
//!
//! For every (model, channel, carrier) group the report must hold the model
//! trained on static users at 30 dB and the one trained on users moving at
//! 30 m/s at 30 dB, each tested in its own speed across the test SNRs.

use std::fmt::Write as _;

use csi_core::channel::{ChannelType, Snr};
use csi_core::trainer::ModelKind;

use crate::error::{CliError, Result};
use crate::report::{EvalReport, ReportRow};
use crate::sweep::CellOutcome;

pub const TREND_SNR_TRAIN: f64 = 30.0;
pub const STATIC_SPEED: f64 = 0.0;
pub const MOBILE_SPEED: f64 = 30.0;
/// Required ratio of zero-prediction MSE to model MSE at 30 dB.
pub const MIN_GAIN_OVER_ZERO: f64 = 10.0;
/// Required relative drop of the training loss from the first epoch.
pub const MIN_LOSS_DROP: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrendSummary {
    pub checks: Vec<TrendCheck>,
}

impl TrendSummary {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn table(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{verdict}  {:<width$}  {}", c.name, c.detail);
        }
        out
    }
}

type Group = (ModelKind, ChannelType, f64);

struct Lookup<'a> {
    rows: &'a [ReportRow],
}

impl<'a> Lookup<'a> {
    fn find(&self, g: Group, v_train: f64, v_test: f64, snr_test: f64) -> Result<&'a ReportRow> {
        self.rows
            .iter()
            .find(|r| {
                (r.model, r.channel, r.fc_hz) == g
                    && r.v_train == v_train
                    && r.snr_train == Snr::Db(TREND_SNR_TRAIN)
                    && r.v_test == v_test
                    && r.snr_test == Snr::Db(snr_test)
            })
            .ok_or_else(|| {
                CliError::MissingCell(format!(
                    "model={} channel={} fc_hz={} v_train={v_train} snr_train={TREND_SNR_TRAIN} v_test={v_test} snr_test={snr_test}",
                    g.0, g.1, g.2
                ))
            })
    }

    /// Finite test SNRs reported for a group's static in-distribution cell, ascending.
    fn static_snrs(&self, g: Group) -> Vec<f64> {
        let mut snrs: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| {
                (r.model, r.channel, r.fc_hz) == g
                    && r.v_train == STATIC_SPEED
                    && r.v_test == STATIC_SPEED
                    && r.snr_train == Snr::Db(TREND_SNR_TRAIN)
            })
            .filter_map(|r| match r.snr_test {
                Snr::Db(v) if v.is_finite() => Some(v),
                _ => None,
            })
            .collect();
        snrs.sort_by(f64::total_cmp);
        snrs.dedup();
        snrs
    }
}

fn groups(report: &EvalReport) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    for r in &report.rows {
        let g = (r.model, r.channel, r.fc_hz);
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

/// Static MSE falls with test SNR, mobile users fare worse than static
/// ones at SNR ≥ 0 dB, and trained models beat zero prediction at 30 dB.
pub fn trend_check(report: &EvalReport) -> Result<TrendSummary> {
    let look = Lookup { rows: &report.rows };
    let mut summary = TrendSummary::default();
    let all_groups = groups(report);
    if all_groups.is_empty() {
        return Err(CliError::Report("report has no rows".into()));
    }
    for g in all_groups {
        let label = format!("{} {} {}GHz", g.0, g.1, g.2 / 1e9);
        let snrs = look.static_snrs(g);
        if snrs.len() < 2 {
            look.find(g, STATIC_SPEED, STATIC_SPEED, TREND_SNR_TRAIN)?;
            return Err(CliError::MissingCell(format!(
                "model={} channel={} fc_hz={}: fewer than two static test SNRs",
                g.0, g.1, g.2
            )));
        }
        let curve = snrs
            .iter()
            .map(|&s| look.find(g, STATIC_SPEED, STATIC_SPEED, s).map(|r| r.mse))
            .collect::<Result<Vec<_>>>()?;
        let inversions = curve.windows(2).filter(|w| w[1] > w[0]).count();
        summary.checks.push(TrendCheck {
            name: format!("static MSE decreases with SNR ({label})"),
            passed: inversions <= 1,
            detail: format!("{inversions} inversion(s) over {:?}", curve.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()),
        });

        let mut worst = f64::INFINITY;
        let mut detail = String::new();
        for &s in snrs.iter().filter(|&&s| s >= 0.0) {
            let mobile = look.find(g, MOBILE_SPEED, MOBILE_SPEED, s)?.mse;
            let still = look.find(g, STATIC_SPEED, STATIC_SPEED, s)?.mse;
            worst = worst.min(mobile - still);
            let _ = write!(detail, "{s}dB: {mobile:.3e} vs {still:.3e}; ");
        }
        summary.checks.push(TrendCheck {
            name: format!("mobile MSE >= static MSE at SNR >= 0 dB ({label})"),
            passed: worst >= 0.0,
            detail: detail.trim_end_matches("; ").to_string(),
        });

        let top = look.find(g, STATIC_SPEED, STATIC_SPEED, TREND_SNR_TRAIN)?;
        let gain = top.mse_zero / top.mse;
        summary.checks.push(TrendCheck {
            name: format!("beats zero prediction by {MIN_GAIN_OVER_ZERO}x at 30 dB ({label})"),
            passed: gain >= MIN_GAIN_OVER_ZERO,
            detail: format!("zero {:.3e} / model {:.3e} = {gain:.1}", top.mse_zero, top.mse),
        });
    }
    Ok(summary)
}

/// Training loss of every static 30 dB cell falls by at least 90% from the first epoch.
pub fn loss_drop_check(outcomes: &[CellOutcome]) -> Vec<TrendCheck> {
    outcomes
        .iter()
        .filter(|o| o.cell.v_train == STATIC_SPEED && o.cell.snr_train == Snr::Db(TREND_SNR_TRAIN))
        .map(|o| {
            let c = &o.cell;
            let name = format!("train loss falls >= 90% ({} {} {}GHz)", c.model, c.channel, c.fc_hz / 1e9);
            match o.record() {
                Some(r) if !r.train_loss.is_empty() => {
                    let first = r.train_loss[0];
                    let last = *r.train_loss.last().unwrap();
                    let drop = 1.0 - last / first;
                    TrendCheck {
                        name,
                        passed: drop >= MIN_LOSS_DROP,
                        detail: format!("{first:.3e} -> {last:.3e} ({:.1}% drop)", 100.0 * drop),
                    }
                }
                _ => TrendCheck {
                    name,
                    passed: false,
                    detail: "no training history".into(),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: ModelKind, v: f64, snr: f64, mse: f64) -> ReportRow {
        ReportRow {
            model,
            channel: ChannelType::Umi,
            fc_hz: 5e9,
            v_train: v,
            snr_train: Snr::Db(30.0),
            v_test: v,
            snr_test: Snr::Db(snr),
            mse,
            mse_copy: 0.5,
            mse_zero: 1.0,
            flops_fwd: 1,
            seconds: 0.0,
            seed: 0,
        }
    }

    fn report(static_curve: [f64; 5], mobile_curve: [f64; 5]) -> EvalReport {
        let snrs = [-30.0, -10.0, 0.0, 10.0, 30.0];
        let mut rows = Vec::new();
        for (i, &s) in snrs.iter().enumerate() {
            rows.push(row(ModelKind::Msa, 0.0, s, static_curve[i]));
            rows.push(row(ModelKind::Msa, 30.0, s, mobile_curve[i]));
        }
        EvalReport { rows, notes: vec![] }
    }

    #[test]
    fn expected_trends_pass() {
        let r = report([1.0, 0.5, 0.2, 0.05, 0.01], [1.1, 0.9, 0.8, 0.7, 0.7]);
        let s = trend_check(&r).unwrap();
        assert!(s.passed(), "{}", s.table());
        assert_eq!(s.checks.len(), 3);
    }

    #[test]
    fn one_inversion_is_tolerated() {
        let r = report([1.0, 0.5, 0.6, 0.05, 0.01], [1.1, 0.9, 0.8, 0.7, 0.7]);
        assert!(trend_check(&r).unwrap().checks[0].passed);
    }

    #[test]
    fn ascending_curve_fails() {
        let r = report([0.01, 0.05, 0.2, 0.5, 1.0], [1.1, 0.9, 0.8, 0.7, 1.1]);
        let s = trend_check(&r).unwrap();
        assert!(!s.checks[0].passed);
        assert!(!s.checks[2].passed);
        assert!(!s.passed());
    }

    #[test]
    fn mobile_better_than_static_fails() {
        let r = report([1.0, 0.5, 0.2, 0.05, 0.01], [1.1, 0.9, 0.1, 0.01, 0.001]);
        assert!(!trend_check(&r).unwrap().checks[1].passed);
    }

    #[test]
    fn missing_cells_are_named() {
        let mut r = report([1.0, 0.5, 0.2, 0.05, 0.01], [1.1, 0.9, 0.8, 0.7, 0.7]);
        r.rows.retain(|x| !(x.v_train == 30.0 && x.snr_test == Snr::Db(10.0)));
        match trend_check(&r) {
            Err(CliError::MissingCell(msg)) => {
                assert!(msg.contains("v_train=30") && msg.contains("snr_test=10"), "{msg}")
            }
            other => panic!("expected a missing-cell error, got {other:?}"),
        }
    }
}
