//! Sweep description, read from JSON.

use std::path::PathBuf;

use csi_core::channel::{ChannelType, ScenarioConfig, Snr};
use csi_core::numkit::AdamConfig;
use csi_core::task::PairOptions;
use csi_core::trainer::{ModelKind, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    #[default]
    Siso,
    /// 20 transmit antennas, 5 single-antenna users.
    Mimo,
}

/// Optimiser and layer settings shared by every cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub tail_window: usize,
    pub adam: AdamConfig,
    pub heads: usize,
    pub state_dim: usize,
    pub skip: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = TrainConfig::new(ModelKind::Msa);
        Self {
            epochs: c.epochs,
            batch_size: c.batch_size,
            eval_every: c.eval_every,
            tail_window: c.tail_window,
            adam: c.adam,
            heads: c.heads,
            state_dim: c.state_dim,
            skip: c.skip,
        }
    }
}

impl TrainSettings {
    pub fn config(&self, model: ModelKind, seed: u64) -> TrainConfig {
        TrainConfig {
            model,
            epochs: self.epochs,
            batch_size: self.batch_size,
            eval_every: self.eval_every,
            tail_window: self.tail_window,
            adam: self.adam,
            heads: self.heads,
            state_dim: self.state_dim,
            skip: self.skip,
            seed,
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub models: Vec<ModelKind>,
    pub channels: Vec<ChannelType>,
    pub carriers_hz: Vec<f64>,
    pub train_speeds: Vec<f64>,
    pub train_snrs: Vec<Snr>,
    pub test_speeds: Vec<f64>,
    pub test_snrs: Vec<Snr>,
    #[serde(default)]
    pub geometry: Geometry,
    /// Overrides the geometry's default subcarrier count (72 SISO, 12 MIMO).
    #[serde(default)]
    pub n_subcarriers: Option<usize>,
    /// Defaults to 256 (SISO) or 128 (MIMO).
    #[serde(default)]
    pub n_train: Option<usize>,
    /// Defaults to 64 (SISO) or 32 (MIMO).
    #[serde(default)]
    pub n_test: Option<usize>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub pairs: PairOptions,
    pub out_dir: PathBuf,
    #[serde(default = "one")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
}

/// Coordinate of one trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainCell {
    pub model: ModelKind,
    pub channel: ChannelType,
    pub fc_hz: f64,
    pub v_train: f64,
    pub snr_train: Snr,
}

/// Coordinate of one test condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestPoint {
    pub v_test: f64,
    pub snr_test: Snr,
}

impl TestPoint {
    pub fn name(&self) -> String {
        format!("v{}_snr{}", self.v_test, self.snr_test)
    }
}

fn unique<T: PartialEq + std::fmt::Debug>(what: &str, items: &[T]) -> Result<()> {
    if items.is_empty() {
        return Err(CliError::Config(format!("{what} list is empty")));
    }
    for (i, a) in items.iter().enumerate() {
        if items[..i].contains(a) {
            return Err(CliError::Config(format!("{what} list repeats {a:?}")));
        }
    }
    Ok(())
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SweepSpec = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("invalid sweep spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        unique("models", &self.models)?;
        unique("channels", &self.channels)?;
        unique("carriers_hz", &self.carriers_hz)?;
        unique("train_speeds", &self.train_speeds)?;
        unique("train_snrs", &self.train_snrs)?;
        unique("test_speeds", &self.test_speeds)?;
        unique("test_snrs", &self.test_snrs)?;
        if self.parallelism == 0 {
            return Err(CliError::Config("parallelism must be at least 1".into()));
        }
        let (n_train, n_test) = self.sizes();
        if n_train == 0 || n_test == 0 {
            return Err(CliError::Config("dataset sizes must be at least 1".into()));
        }
        for cell in self.train_cells() {
            self.scenario(cell.channel, cell.fc_hz, cell.v_train, cell.snr_train).validate()?;
        }
        for p in self.test_points() {
            self.scenario(self.channels[0], self.carriers_hz[0], p.v_test, p.snr_test).validate()?;
        }
        self.train.config(self.models[0], 0).validate()?;
        Ok(())
    }

    pub fn sizes(&self) -> (usize, usize) {
        let (train, test) = match self.geometry {
            Geometry::Siso => (256, 64),
            Geometry::Mimo => (128, 32),
        };
        (self.n_train.unwrap_or(train), self.n_test.unwrap_or(test))
    }

    pub fn scenario(&self, channel: ChannelType, fc_hz: f64, speed: f64, snr: Snr) -> ScenarioConfig {
        let base = match self.geometry {
            Geometry::Siso => ScenarioConfig::siso(channel, speed, snr, fc_hz),
            Geometry::Mimo => ScenarioConfig::mimo(channel, speed, snr, fc_hz),
        };
        ScenarioConfig {
            n_subcarriers: self.n_subcarriers.unwrap_or(base.n_subcarriers),
            ..base
        }
    }

    /// Training coordinates in declaration order (model slowest).
    pub fn train_cells(&self) -> Vec<TrainCell> {
        let mut out = Vec::new();
        for &model in &self.models {
            for &channel in &self.channels {
                for &fc_hz in &self.carriers_hz {
                    for &v_train in &self.train_speeds {
                        for &snr_train in &self.train_snrs {
                            out.push(TrainCell {
                                model,
                                channel,
                                fc_hz,
                                v_train,
                                snr_train,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn test_points(&self) -> Vec<TestPoint> {
        self.test_speeds
            .iter()
            .flat_map(|&v_test| {
                self.test_snrs
                    .iter()
                    .map(move |&snr_test| TestPoint { v_test, snr_test })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn siso_id_panel() -> SweepSpec {
        SweepSpec::from_json(
            r#"{
                "models": ["msa", "ssm"],
                "channels": ["UMi"],
                "carriers_hz": [5e9],
                "train_speeds": [0],
                "train_snrs": [-30, -10, 0, 10, 30, "all"],
                "test_speeds": [0],
                "test_snrs": [-30, -10, 0, 10, 30],
                "out_dir": "out"
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn siso_panel_has_sixty_rows() {
        let s = siso_id_panel();
        assert_eq!(s.train_cells().len() * s.test_points().len(), 60);
        assert_eq!(s.sizes(), (256, 64));
        assert_eq!(s.train.epochs, 1000);
    }

    #[test]
    fn empty_or_repeated_axes_are_rejected() {
        let mut s = siso_id_panel();
        s.test_snrs.clear();
        assert!(matches!(s.validate(), Err(CliError::Config(_))));
        let mut s = siso_id_panel();
        s.models.push(ModelKind::Msa);
        assert!(matches!(s.validate(), Err(CliError::Config(_))));
        assert!(SweepSpec::from_json("{}").is_err());
    }

    #[test]
    fn mimo_defaults() {
        let s = SweepSpec {
            geometry: Geometry::Mimo,
            ..siso_id_panel()
        };
        assert_eq!(s.sizes(), (128, 32));
        let c = s.scenario(ChannelType::Uma, 28e9, 10.0, Snr::All);
        assert_eq!(c.shape(), [14, 12, 5, 20]);
    }
}
