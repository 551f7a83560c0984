//! Channel grid export: a CSIG container plus a JSON sidecar.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use csi_core::channel::{add_awgn, gen_slot, make_taps, write_container, ScenarioConfig};
use csi_core::rng::derive;
use csi_core::task::draw_snr;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub format: String,
    pub scenario: ScenarioConfig,
    /// `(N_s, N_f, N_u, N_t)`.
    pub shape: [usize; 4],
    pub slots: Vec<usize>,
    /// Applied SNR per slot in dB; absent for clean grids.
    pub snr_db: Option<Vec<f64>>,
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

/// Writes slots `0..n_slots` of one tap process to `out` and the metadata to `<out>.json`.
pub fn gridgen(scenario: &ScenarioConfig, out: &Path, n_slots: usize, noisy: bool) -> Result<GridMetadata> {
    if n_slots == 0 {
        return Err(CliError::Config("at least one slot is required".into()));
    }
    let taps = make_taps(scenario)?;
    let mut grids = Vec::with_capacity(n_slots);
    let mut snrs = Vec::with_capacity(n_slots);
    for slot in 0..n_slots {
        let clean = gen_slot(&taps, scenario, slot)?;
        if noisy {
            let seed = derive(scenario.seed, slot as u64);
            let snr = draw_snr(scenario.snr, seed);
            grids.push(add_awgn(&clean, snr, seed));
            snrs.push(snr);
        } else {
            grids.push(clean);
        }
    }
    let file = fs::File::create(out).map_err(|e| CliError::io(out, e))?;
    write_container(BufWriter::new(file), &grids)?;
    let meta = GridMetadata {
        format: "CSIG v1: magic, u32 version, u64 x4 shape, little-endian f64 (re, im) pairs".into(),
        scenario: *scenario,
        shape: scenario.shape(),
        slots: (0..n_slots).collect(),
        snr_db: noisy.then_some(snrs),
    };
    let side = sidecar_path(out);
    fs::write(&side, serde_json::to_string_pretty(&meta)?).map_err(|e| CliError::io(&side, e))?;
    Ok(meta)
}
