//! Next-slot prediction pairs.
//!
//! A slot grid becomes an `N_s × E` real matrix whose row `s` holds the real
//! parts of every `(subcarrier, user, antenna)` coefficient of symbol `s`
//! followed by the imaginary parts in the same order. A training pair maps
//! the (noisy) slot `i` onto the clean slot `i + 1` of the same tap process.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    add_awgn, gen_slot, make_taps, read_container, write_container, CsiGrid, ScenarioConfig, Snr,
    TapSet, SLOTS_PER_FRAME, SNR_SET_DB,
};
use crate::error::{config, Error, Result};
use crate::numkit::Mat;
use crate::rng::{derive, mix64, rng};

const TAG_SNR: u64 = 0x5e1;
const TAG_INPUT_NOISE: u64 = 0x1a;
const TAG_TARGET_NOISE: u64 = 0x7a;
const TAG_SLOT: u64 = 0x510;
const TAG_NOISE: u64 = 0x0153;

#[derive(Debug, Clone, PartialEq)]
pub struct SeqSample {
    pub input: Mat,
    pub target: Mat,
    /// Scenario with `seed` set to this sample's tap seed.
    pub scenario: ScenarioConfig,
    pub slot_index: usize,
    /// SNR actually applied, in dB; `+∞` when no noise was added.
    pub snr_db: f64,
}

impl SeqSample {
    pub fn tap_seed(&self) -> u64 {
        self.scenario.seed
    }
}

/// Feature width `2·N_f·N_u·N_t`.
pub fn feature_dim(shape: [usize; 4]) -> usize {
    2 * shape[1] * shape[2] * shape[3]
}

pub fn grid_to_sequence(g: &CsiGrid) -> Mat {
    let shape = g.shape();
    let half = feature_dim(shape) / 2;
    let mut m = Mat::zeros(shape[0], 2 * half);
    for s in 0..shape[0] {
        let row = m.row_mut(s);
        for (j, z) in g.symbol(s).iter().enumerate() {
            row[j] = z.re;
            row[j + half] = z.im;
        }
    }
    m
}

/// Exact inverse of [`grid_to_sequence`] for a grid of `shape`.
pub fn sequence_to_grid(m: &Mat, shape: [usize; 4]) -> Result<CsiGrid> {
    let e = feature_dim(shape);
    if m.shape() != (shape[0], e) {
        return Err(Error::Shape {
            op: "sequence_to_grid",
            left: (shape[0], e),
            right: m.shape(),
        });
    }
    let half = e / 2;
    let data = (0..shape[0])
        .flat_map(|s| {
            let row = m.row(s);
            (0..half).map(move |j| Complex64::new(row[j], row[j + half]))
        })
        .collect();
    CsiGrid::from_data(shape, data)
}

/// Noise placement and scaling for a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairOptions {
    pub noise_on_input: bool,
    pub noise_on_target: bool,
    pub normalize: bool,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self {
            noise_on_input: true,
            noise_on_target: false,
            normalize: true,
        }
    }
}

/// Resolves the SNR of one sample: fixed values pass through, `all` draws from the SNR set.
pub fn draw_snr(snr: Snr, seed: u64) -> f64 {
    match snr {
        Snr::Db(v) => v,
        Snr::All => SNR_SET_DB[rng(derive(seed, TAG_SNR)).random_range(0..SNR_SET_DB.len())],
    }
}

/// Pair with the default options: noisy input, clean target, unit input power.
pub fn make_pair(taps: &TapSet, cfg: &ScenarioConfig, slot_index: usize, noise_seed: u64) -> Result<SeqSample> {
    make_pair_with(taps, cfg, slot_index, noise_seed, PairOptions::default())
}

pub fn make_pair_with(
    taps: &TapSet,
    cfg: &ScenarioConfig,
    slot_index: usize,
    noise_seed: u64,
    opts: PairOptions,
) -> Result<SeqSample> {
    let snr_db = draw_snr(cfg.snr, noise_seed);
    let current = gen_slot(taps, cfg, slot_index)?;
    let next = gen_slot(taps, cfg, slot_index + 1)?;
    let noisy = |g: CsiGrid, on: bool, tag: u64| {
        if on {
            add_awgn(&g, snr_db, derive(noise_seed, tag))
        } else {
            g
        }
    };
    let mut input = grid_to_sequence(&noisy(current, opts.noise_on_input, TAG_INPUT_NOISE));
    let mut target = grid_to_sequence(&noisy(next, opts.noise_on_target, TAG_TARGET_NOISE));
    if opts.normalize {
        let power = input.mean_square();
        if power > 0.0 {
            let k = 1.0 / power.sqrt();
            input = input.scale(k);
            target = target.scale(k);
        }
    }
    let applied = if opts.noise_on_input || opts.noise_on_target {
        snr_db
    } else {
        f64::INFINITY
    };
    Ok(SeqSample {
        input,
        target,
        scenario: *cfg,
        slot_index,
        snr_db: applied,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Tap seed of sample `index` in `split`. Train seeds are even and test
/// seeds odd, so the two splits never share a tap process.
pub fn tap_seed(seed: u64, split: Split, index: usize) -> u64 {
    let parity = match split {
        Split::Train => 0,
        Split::Test => 1,
    };
    (mix64(seed) & !1).wrapping_add(2 * index as u64 + parity)
}

fn default_true() -> bool {
    true
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_train_samples: usize,
    pub n_test_samples: usize,
    pub train_scenario: ScenarioConfig,
    pub test_scenario: ScenarioConfig,
    #[serde(default = "default_true")]
    pub noise_on_input: bool,
    #[serde(default)]
    pub noise_on_target: bool,
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Consecutive pairs taken from each tap process; 1 means a fresh channel per sample.
    #[serde(default = "one")]
    pub pairs_per_process: usize,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(n_train: usize, n_test: usize, train: ScenarioConfig, test: ScenarioConfig, seed: u64) -> Self {
        Self {
            n_train_samples: n_train,
            n_test_samples: n_test,
            train_scenario: train,
            test_scenario: test,
            noise_on_input: true,
            noise_on_target: false,
            normalize: true,
            pairs_per_process: 1,
            seed,
        }
    }

    pub fn pair_options(&self) -> PairOptions {
        PairOptions {
            noise_on_input: self.noise_on_input,
            noise_on_target: self.noise_on_target,
            normalize: self.normalize,
        }
    }
}

/// Samples `n` pairs of `split` for `scenario`; the scenario's own seed is ignored.
pub fn build_split(
    scenario: &ScenarioConfig,
    n: usize,
    seed: u64,
    split: Split,
    opts: PairOptions,
    pairs_per_process: usize,
) -> Result<Vec<SeqSample>> {
    if pairs_per_process == 0 {
        return config("pairs_per_process must be at least 1");
    }
    let mut out = Vec::with_capacity(n);
    let mut process = 0;
    while out.len() < n {
        let ts = tap_seed(seed, split, process);
        let cfg = scenario.with_seed(ts);
        let taps = make_taps(&cfg)?;
        let first = (derive(ts, TAG_SLOT) % SLOTS_PER_FRAME as u64) as usize;
        for j in 0..pairs_per_process.min(n - out.len()) {
            let noise_seed = derive(derive(ts, TAG_NOISE), j as u64);
            out.push(make_pair_with(&taps, &cfg, first + j, noise_seed, opts)?);
        }
        process += 1;
    }
    Ok(out)
}

pub fn build_dataset(spec: &DatasetSpec) -> Result<(Vec<SeqSample>, Vec<SeqSample>)> {
    if spec.n_train_samples == 0 || spec.n_test_samples == 0 {
        return config("dataset sizes must be at least 1");
    }
    let opts = spec.pair_options();
    let train = build_split(&spec.train_scenario, spec.n_train_samples, spec.seed, Split::Train, opts, spec.pairs_per_process)?;
    let test = build_split(&spec.test_scenario, spec.n_test_samples, spec.seed, Split::Test, opts, spec.pairs_per_process)?;
    Ok((train, test))
}

fn dataset_paths(dir: &Path, name: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{name}.inputs.csig")),
        dir.join(format!("{name}.targets.csig")),
        dir.join(format!("{name}.manifest")),
    ]
}

/// Writes `<name>.inputs.csig`, `<name>.targets.csig` and a `<name>.manifest`
/// listing the scenario and the seed, slot and SNR of every sample.
pub fn export_dataset(dir: &Path, name: &str, samples: &[SeqSample]) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Config("cannot export an empty dataset".into()))?;
    let shape = first.scenario.shape();
    if samples.iter().any(|s| s.scenario.shape() != shape) {
        return config("all exported samples must share one grid shape");
    }
    let [inputs, targets, manifest] = dataset_paths(dir, name);
    let to_grids = |pick: fn(&SeqSample) -> &Mat| -> Result<Vec<CsiGrid>> {
        samples.iter().map(|s| sequence_to_grid(pick(s), shape)).collect()
    };
    write_container(BufWriter::new(fs::File::create(inputs)?), &to_grids(|s| &s.input)?)?;
    write_container(BufWriter::new(fs::File::create(targets)?), &to_grids(|s| &s.target)?)?;
    let mut w = BufWriter::new(fs::File::create(manifest)?);
    writeln!(w, "# dataset manifest v1")?;
    writeln!(w, "scenario {}", serde_json::to_string(&first.scenario.with_seed(0))?)?;
    writeln!(w, "# index tap_seed slot_index snr_db")?;
    for (i, s) in samples.iter().enumerate() {
        writeln!(w, "{i} {} {} {}", s.tap_seed(), s.slot_index, s.snr_db)?;
    }
    w.flush()?;
    Ok(())
}

pub fn import_dataset(dir: &Path, name: &str) -> Result<Vec<SeqSample>> {
    let [inputs, targets, manifest] = dataset_paths(dir, name);
    let inputs = read_container(BufReader::new(fs::File::open(inputs)?))?;
    let targets = read_container(BufReader::new(fs::File::open(targets)?))?;
    let mut scenario: Option<ScenarioConfig> = None;
    let mut rows = Vec::new();
    for line in BufReader::new(fs::File::open(manifest)?).lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(json) = line.strip_prefix("scenario ") {
            scenario = Some(serde_json::from_str(json)?);
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || Error::Format(format!("bad manifest line {line:?}"));
        if fields.len() != 4 {
            return Err(bad());
        }
        let seed: u64 = fields[1].parse().map_err(|_| bad())?;
        let slot: usize = fields[2].parse().map_err(|_| bad())?;
        let snr: f64 = fields[3].parse().map_err(|_| bad())?;
        rows.push((seed, slot, snr));
    }
    let scenario = scenario.ok_or_else(|| Error::Format("manifest lacks a scenario line".into()))?;
    if rows.len() != inputs.len() || rows.len() != targets.len() {
        return Err(Error::Format(format!(
            "manifest lists {} samples but containers hold {} inputs and {} targets",
            rows.len(),
            inputs.len(),
            targets.len()
        )));
    }
    rows.into_iter()
        .zip(inputs.iter().zip(&targets))
        .map(|((seed, slot_index, snr_db), (x, y))| {
            if x.shape() != scenario.shape() || y.shape() != scenario.shape() {
                return Err(Error::Format("container shape disagrees with manifest scenario".into()));
            }
            Ok(SeqSample {
                input: grid_to_sequence(x),
                target: grid_to_sequence(y),
                scenario: scenario.with_seed(seed),
                slot_index,
                snr_db,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::ChannelType;

    fn siso(speed: f64, snr: Snr) -> ScenarioConfig {
        ScenarioConfig::siso(ChannelType::Umi, speed, snr, 5e9).with_seed(11)
    }

    #[test]
    fn siso_sequence_shape() {
        let c = siso(10.0, Snr::Db(10.0));
        let g = gen_slot(&make_taps(&c).unwrap(), &c, 0).unwrap();
        assert_eq!(grid_to_sequence(&g).shape(), (14, 144));
        assert_eq!(grid_to_sequence(&CsiGrid::zeros([14, 72, 1, 1])), Mat::zeros(14, 144));
    }

    #[test]
    fn feature_layout_pairs_real_and_imaginary_parts() {
        let shape = [2, 3, 2, 4];
        let mut g = CsiGrid::zeros(shape);
        for s in 0..2 {
            for k in 0..3 {
                for u in 0..2 {
                    for a in 0..4 {
                        let tag = (1000 * s + 100 * k + 10 * u + a) as f64;
                        g.set(s, k, u, a, Complex64::new(tag, -tag));
                    }
                }
            }
        }
        let m = grid_to_sequence(&g);
        let half = m.cols() / 2;
        for s in 0..2 {
            for j in 0..half {
                assert_eq!(m[(s, j)], -m[(s, j + half)]);
            }
            // (k, u, a) lexicographic
            assert_eq!(m[(s, 8 + 4 + 3)], (1000 * s + 100 + 10 + 3) as f64);
        }
        assert_eq!(sequence_to_grid(&m, shape).unwrap().data(), g.data());
        assert!(sequence_to_grid(&m, [2, 3, 2, 5]).is_err());
    }

    #[test]
    fn static_noiseless_pair_is_a_copy() {
        let c = siso(0.0, Snr::NOISELESS);
        let p = make_pair(&make_taps(&c).unwrap(), &c, 3, 1).unwrap();
        assert_eq!(p.input, p.target);
        assert!((p.input.mean_square() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pair_across_subframe_boundary() {
        let c = siso(30.0, Snr::Db(30.0));
        let p = make_pair(&make_taps(&c).unwrap(), &c, 19, 4).unwrap();
        assert!(p.input.is_finite() && p.target.is_finite());
        assert_eq!(p.slot_index, 19);
    }

    #[test]
    fn target_clean_and_input_noisy_by_default() {
        let c = siso(0.0, Snr::Db(0.0));
        let taps = make_taps(&c).unwrap();
        let p = make_pair(&taps, &c, 0, 2).unwrap();
        // static channel: the clean target is the clean input, so the gap is pure noise
        let noise = p.input.sub(&p.target).unwrap().mean_square();
        let signal = p.target.mean_square();
        assert!((10.0 * (signal / noise).log10()).abs() < 0.5);
        let both = PairOptions { noise_on_target: true, ..PairOptions::default() };
        let q = make_pair_with(&taps, &c, 0, 2, both).unwrap();
        assert_ne!(q.target, p.target);
    }

    #[test]
    fn all_mode_draws_each_snr_about_equally() {
        let n = 10_000;
        let mut counts = [0usize; 5];
        for i in 0..n {
            let v = draw_snr(Snr::All, i as u64);
            counts[SNR_SET_DB.iter().position(|&s| s == v).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.2).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn datasets_are_deterministic_sized_and_disjoint() {
        let c = siso(10.0, Snr::All);
        let spec = DatasetSpec::new(8, 4, c, c, 5);
        let (train, test) = build_dataset(&spec).unwrap();
        assert_eq!((train.len(), test.len()), (8, 4));
        assert_eq!(build_dataset(&spec).unwrap(), (train.clone(), test.clone()));
        for (a, b) in train.iter().zip(&test) {
            assert_ne!(a.tap_seed(), b.tap_seed());
        }
        assert!(train.iter().all(|s| s.tap_seed() % 2 == 0));
        assert!(test.iter().all(|s| s.tap_seed() % 2 == 1));
        assert!(train.iter().all(|s| s.slot_index < SLOTS_PER_FRAME));
        assert!(build_dataset(&DatasetSpec::new(0, 4, c, c, 5)).is_err());
    }

    #[test]
    fn sliding_windows_share_a_process() {
        let c = siso(10.0, Snr::Db(30.0));
        let spec = DatasetSpec { pairs_per_process: 3, ..DatasetSpec::new(6, 1, c, c, 1) };
        let (train, _) = build_dataset(&spec).unwrap();
        assert_eq!(train[0].tap_seed(), train[2].tap_seed());
        assert_eq!(train[1].slot_index, train[0].slot_index + 1);
        assert_ne!(train[2].tap_seed(), train[3].tap_seed());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let c = ScenarioConfig::mimo(ChannelType::Uma, 20.0, Snr::All, 28e9);
        let (train, _) = build_dataset(&DatasetSpec::new(3, 1, c, c, 9)).unwrap();
        export_dataset(dir.path(), "train", &train).unwrap();
        assert_eq!(import_dataset(dir.path(), "train").unwrap(), train);
    }
}
