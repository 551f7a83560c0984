//! Tapped-delay-line surrogate for NLOS UMi/UMa OFDM channels.
//!
//! Each (user, tap) pair carries an independent Rayleigh process built from
//! `M = 32` sinusoids with stratified Jakes angles, so the ensemble temporal
//! autocorrelation is `J₀(2π f_D τ)`. Delays sit on a uniform grid scaled to
//! the channel type's RMS delay spread with an exponential power profile.
//! MIMO grids apply a half-wavelength ULA steering phase per tap.
//!
//! The constants are surrogates chosen to keep the micro/macro contrast
//! (shorter vs. longer delay spread); they are not 38.901 cluster tables.

use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{config, Error, Result};
use crate::rng::rng;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const NUM_TAPS: usize = 8;
pub const NUM_SINUSOIDS: usize = 32;
/// Exponential decay of the power profile, in taps.
pub const PROFILE_DECAY_TAPS: f64 = 2.0;
pub const MAX_AOD_RAD: f64 = PI / 3.0;
/// SNR values of the benchmark grid, in dB.
pub const SNR_SET_DB: [f64; 5] = [-30.0, -10.0, 0.0, 10.0, 30.0];
/// User speeds of the benchmark grid, in m/s.
pub const SPEED_SET: [f64; 4] = [0.0, 10.0, 20.0, 30.0];
pub const CARRIER_SET_HZ: [f64; 2] = [5e9, 28e9];
pub const SUBCARRIER_SPACING_HZ: f64 = 30e3;
pub const SYMBOLS_PER_SLOT: usize = 14;
pub const SLOTS_PER_FRAME: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelType {
    #[serde(rename = "UMi")]
    Umi,
    #[serde(rename = "UMa")]
    Uma,
}

impl ChannelType {
    /// Surrogate RMS delay spread in seconds.
    pub fn rms_delay_spread(self) -> f64 {
        match self {
            ChannelType::Umi => 100e-9,
            ChannelType::Uma => 300e-9,
        }
    }
}

impl fmt::Display for ChannelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ChannelType::Umi => "UMi",
            ChannelType::Uma => "UMa",
        })
    }
}

impl std::str::FromStr for ChannelType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "UMi" | "umi" => Ok(ChannelType::Umi),
            "UMa" | "uma" => Ok(ChannelType::Uma),
            other => config(format!("unknown channel type {other:?}")),
        }
    }
}

/// Observation SNR: a fixed value in dB (`+∞` disables noise) or `all`,
/// meaning a per-sample uniform draw from [`SNR_SET_DB`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Snr {
    Db(f64),
    All,
}

impl Snr {
    pub const NOISELESS: Snr = Snr::Db(f64::INFINITY);
}

impl fmt::Display for Snr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Snr::All => f.write_str("all"),
            Snr::Db(v) if v.is_infinite() && *v > 0.0 => f.write_str("inf"),
            Snr::Db(v) => write!(f, "{v}"),
        }
    }
}

impl std::str::FromStr for Snr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "all" => Ok(Snr::All),
            "inf" | "+inf" => Ok(Snr::NOISELESS),
            other => other
                .parse::<f64>()
                .map(Snr::Db)
                .map_err(|_| Error::Config(format!("bad SNR value {other:?}"))),
        }
    }
}

impl Serialize for Snr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Snr::Db(v) if v.is_finite() => s.serialize_f64(*v),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Snr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct SnrVisitor;
        impl Visitor<'_> for SnrVisitor {
            type Value = Snr;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an SNR in dB, \"all\" or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Snr, E> {
                Ok(Snr::Db(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Snr, E> {
                Ok(Snr::Db(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Snr, E> {
                Ok(Snr::Db(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Snr, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(SnrVisitor)
    }
}

fn default_spacing() -> f64 {
    SUBCARRIER_SPACING_HZ
}

fn default_symbols() -> usize {
    SYMBOLS_PER_SLOT
}

fn one() -> usize {
    1
}

/// One train or test condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub channel: ChannelType,
    /// User speed, m/s.
    pub speed: f64,
    pub snr: Snr,
    pub carrier_hz: f64,
    #[serde(default = "default_spacing")]
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
    #[serde(default = "default_symbols")]
    pub n_symbols: usize,
    #[serde(default = "one")]
    pub n_tx: usize,
    #[serde(default = "one")]
    pub n_users: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    /// Single-antenna link with 72 subcarriers.
    pub fn siso(channel: ChannelType, speed: f64, snr: Snr, carrier_hz: f64) -> Self {
        Self {
            channel,
            speed,
            snr,
            carrier_hz,
            subcarrier_spacing_hz: SUBCARRIER_SPACING_HZ,
            n_subcarriers: 72,
            n_symbols: SYMBOLS_PER_SLOT,
            n_tx: 1,
            n_users: 1,
            seed: 0,
        }
    }

    /// 20-element ULA serving 5 single-antenna users over 12 subcarriers.
    pub fn mimo(channel: ChannelType, speed: f64, snr: Snr, carrier_hz: f64) -> Self {
        Self {
            n_subcarriers: 12,
            n_tx: 20,
            n_users: 5,
            ..Self::siso(channel, speed, snr, carrier_hz)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.speed.is_finite() || self.speed < 0.0 {
            return config(format!("speed must be finite and non-negative, got {}", self.speed));
        }
        if [self.carrier_hz, self.subcarrier_spacing_hz].iter().any(|x| x.is_nan() || *x <= 0.0) {
            return config("carrier frequency and subcarrier spacing must be positive");
        }
        if self.n_subcarriers == 0 || self.n_symbols == 0 || self.n_tx == 0 || self.n_users == 0 {
            return config("grid dimensions must be at least 1");
        }
        if let Snr::Db(v) = self.snr {
            if v.is_nan() || v == f64::NEG_INFINITY {
                return config(format!("invalid SNR {v}"));
            }
        }
        Ok(())
    }

    /// Whether every coordinate lies on the replication grid (speeds, SNRs, carriers, 30 kHz).
    pub fn is_replication_point(&self) -> bool {
        let snr_ok = match self.snr {
            Snr::All => true,
            Snr::Db(v) => SNR_SET_DB.contains(&v),
        };
        snr_ok
            && SPEED_SET.contains(&self.speed)
            && CARRIER_SET_HZ.contains(&self.carrier_hz)
            && self.subcarrier_spacing_hz == SUBCARRIER_SPACING_HZ
    }

    /// 1 ms at 15 kHz, halving with every doubling of the spacing.
    pub fn slot_duration(&self) -> f64 {
        1e-3 * 15e3 / self.subcarrier_spacing_hz
    }

    pub fn symbol_duration(&self) -> f64 {
        self.slot_duration() / self.n_symbols as f64
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n_symbols, self.n_subcarriers, self.n_users, self.n_tx]
    }

    pub fn doppler_hz(&self) -> f64 {
        max_doppler(self.speed, self.carrier_hz)
    }
}

/// `f_D = v · f_c / c`.
pub fn max_doppler(speed: f64, carrier_hz: f64) -> f64 {
    speed * carrier_hz / SPEED_OF_LIGHT
}

/// Sum-of-sinusoids Rayleigh process with unit mean power.
#[derive(Debug, Clone, PartialEq)]
pub struct SosProcess {
    /// Per-sinusoid Doppler shift `f_D cos α_m`, Hz.
    pub freqs: [f64; NUM_SINUSOIDS],
    pub phases: [f64; NUM_SINUSOIDS],
}

impl SosProcess {
    fn draw<R: Rng + ?Sized>(doppler_hz: f64, r: &mut R) -> Self {
        let m = NUM_SINUSOIDS as f64;
        let theta: f64 = r.random_range(-PI..PI);
        let mut freqs = [0.0; NUM_SINUSOIDS];
        let mut phases = [0.0; NUM_SINUSOIDS];
        for i in 0..NUM_SINUSOIDS {
            let alpha = (2.0 * PI * (i + 1) as f64 - PI + theta) / m;
            freqs[i] = doppler_hz * alpha.cos();
            phases[i] = r.random_range(0.0..2.0 * PI);
        }
        Self { freqs, phases }
    }

    pub fn gain(&self, t: f64) -> Complex64 {
        let sum: Complex64 = self
            .freqs
            .iter()
            .zip(&self.phases)
            .map(|(f, p)| Complex64::from_polar(1.0, 2.0 * PI * f * t + p))
            .sum();
        sum / (NUM_SINUSOIDS as f64).sqrt()
    }
}

/// Fading state of one scenario draw.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSet {
    /// Ascending, seconds.
    pub delays: Vec<f64>,
    /// Linear, summing to one.
    pub powers: Vec<f64>,
    pub doppler_hz: f64,
    pub n_users: usize,
    /// Indexed `user · L + tap`.
    pub processes: Vec<SosProcess>,
    /// Departure angle per `user · L + tap`, radians.
    pub aod: Vec<f64>,
    pub time_origin: f64,
}

impl TapSet {
    pub fn num_taps(&self) -> usize {
        self.delays.len()
    }

    /// Power-weighted RMS delay spread.
    pub fn rms_delay_spread(&self) -> f64 {
        let mean: f64 = self.delays.iter().zip(&self.powers).map(|(d, p)| d * p).sum();
        let second: f64 = self.delays.iter().zip(&self.powers).map(|(d, p)| d * d * p).sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    /// Complex gain of tap `tap` for user `user` at absolute time `t`, including `√p_l`.
    pub fn tap_gain(&self, user: usize, tap: usize, t: f64) -> Complex64 {
        let l = self.num_taps();
        self.processes[user * l + tap].gain(t - self.time_origin) * self.powers[tap].sqrt()
    }
}

fn exponential_profile(taps: usize, decay: f64) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = (0..taps).map(|l| (-(l as f64) / decay).exp()).collect();
    let total: f64 = raw.iter().sum();
    let powers: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let mean: f64 = powers.iter().enumerate().map(|(l, p)| l as f64 * p).sum();
    let second: f64 = powers.iter().enumerate().map(|(l, p)| (l * l) as f64 * p).sum();
    (powers, (second - mean * mean).sqrt())
}

/// Draws the fading state for `cfg` from `cfg.seed`.
pub fn make_taps(cfg: &ScenarioConfig) -> Result<TapSet> {
    cfg.validate()?;
    let (powers, spread_in_taps) = exponential_profile(NUM_TAPS, PROFILE_DECAY_TAPS);
    let spacing = cfg.channel.rms_delay_spread() / spread_in_taps;
    let delays = (0..NUM_TAPS).map(|l| l as f64 * spacing).collect();
    let doppler_hz = cfg.doppler_hz();
    let mut r = rng(cfg.seed);
    let mut processes = Vec::with_capacity(cfg.n_users * NUM_TAPS);
    let mut aod = Vec::with_capacity(cfg.n_users * NUM_TAPS);
    for _ in 0..cfg.n_users * NUM_TAPS {
        processes.push(SosProcess::draw(doppler_hz, &mut r));
        aod.push(r.random_range(-MAX_AOD_RAD..=MAX_AOD_RAD));
    }
    Ok(TapSet {
        delays,
        powers,
        doppler_hz,
        n_users: cfg.n_users,
        processes,
        aod,
        time_origin: 0.0,
    })
}

/// Complex channel over `(symbol, subcarrier, user, tx antenna)` for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiGrid {
    shape: [usize; 4],
    data: Vec<Complex64>,
    pub slot_index: usize,
    pub time_origin: f64,
}

impl CsiGrid {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![Complex64::new(0.0, 0.0); shape.iter().product()],
            slot_index: 0,
            time_origin: 0.0,
        }
    }

    pub fn from_data(shape: [usize; 4], data: Vec<Complex64>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::Shape {
                op: "csi_grid",
                left: (shape.iter().product(), 1),
                right: (data.len(), 1),
            });
        }
        Ok(Self {
            shape,
            data,
            slot_index: 0,
            time_origin: 0.0,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    fn offset(&self, s: usize, k: usize, u: usize, a: usize) -> usize {
        let [_, nf, nu, nt] = self.shape;
        ((s * nf + k) * nu + u) * nt + a
    }

    pub fn get(&self, s: usize, k: usize, u: usize, a: usize) -> Complex64 {
        self.data[self.offset(s, k, u, a)]
    }

    pub fn set(&mut self, s: usize, k: usize, u: usize, a: usize, v: Complex64) {
        let i = self.offset(s, k, u, a);
        self.data[i] = v;
    }

    /// All `(subcarrier, user, antenna)` coefficients of one symbol.
    pub fn symbol(&self, s: usize) -> &[Complex64] {
        let w = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[s * w..(s + 1) * w]
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Grid of slot `slot_index`: symbol `s` sits at `slot_index·T_slot + s·T_sym`.
pub fn gen_slot(taps: &TapSet, cfg: &ScenarioConfig, slot_index: usize) -> Result<CsiGrid> {
    cfg.validate()?;
    if taps.n_users != cfg.n_users {
        return config(format!(
            "tap set has {} users, scenario has {}",
            taps.n_users, cfg.n_users
        ));
    }
    let [ns, nf, nu, nt] = cfg.shape();
    let l = taps.num_taps();
    let freq_phase: Vec<Complex64> = (0..nf)
        .flat_map(|k| {
            let fk = k as f64 * cfg.subcarrier_spacing_hz;
            taps.delays
                .iter()
                .map(move |tau| Complex64::from_polar(1.0, -2.0 * PI * fk * tau))
        })
        .collect();
    let steer: Vec<Complex64> = taps
        .aod
        .iter()
        .flat_map(|th| (0..nt).map(move |a| Complex64::from_polar(1.0, PI * a as f64 * th.sin())))
        .collect();
    let t0 = taps.time_origin + slot_index as f64 * cfg.slot_duration();
    let mut grid = CsiGrid::zeros(cfg.shape());
    grid.slot_index = slot_index;
    grid.time_origin = taps.time_origin;
    // steered tap gains of one symbol, laid out as (user, antenna, tap)
    let mut steered = vec![Complex64::new(0.0, 0.0); nu * nt * l];
    for s in 0..ns {
        let t = t0 + s as f64 * cfg.symbol_duration();
        for u in 0..nu {
            for tap in 0..l {
                let g = taps.tap_gain(u, tap, t);
                for a in 0..nt {
                    steered[(u * nt + a) * l + tap] = g * steer[(u * l + tap) * nt + a];
                }
            }
        }
        for k in 0..nf {
            let phase = &freq_phase[k * l..(k + 1) * l];
            for u in 0..nu {
                for a in 0..nt {
                    let row = &steered[(u * nt + a) * l..(u * nt + a + 1) * l];
                    let acc: Complex64 = row.iter().zip(phase).map(|(g, p)| g * p).sum();
                    grid.set(s, k, u, a, acc);
                }
            }
        }
    }
    Ok(grid)
}

/// Adds circularly-symmetric Gaussian noise at `snr_db` relative to the grid's mean power.
pub fn add_awgn(grid: &CsiGrid, snr_db: f64, seed: u64) -> CsiGrid {
    let mut out = grid.clone();
    let noise_var = grid.mean_power() / 10f64.powf(snr_db / 10.0);
    if noise_var == 0.0 || !noise_var.is_finite() {
        return out;
    }
    let sd = (noise_var / 2.0).sqrt();
    let mut r = rng(seed);
    for z in out.data.iter_mut() {
        let re: f64 = r.sample(StandardNormal);
        let im: f64 = r.sample(StandardNormal);
        *z += Complex64::new(re * sd, im * sd);
    }
    out
}

pub const CONTAINER_MAGIC: &[u8; 4] = b"CSIG";
pub const CONTAINER_VERSION: u32 = 1;

/// Writes grids of one shape back to back: `"CSIG"`, `u32` version, four
/// `u64` dims `(N_s, N_f, N_u, N_t)`, then little-endian `f64` pairs (re, im).
pub fn write_container<W: Write>(mut w: W, grids: &[CsiGrid]) -> Result<()> {
    let shape = grids.first().map_or([0; 4], |g| g.shape);
    if let Some(bad) = grids.iter().find(|g| g.shape != shape) {
        return config(format!(
            "container grids must share one shape: {shape:?} vs {:?}",
            bad.shape
        ));
    }
    w.write_all(CONTAINER_MAGIC)?;
    w.write_all(&CONTAINER_VERSION.to_le_bytes())?;
    for d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(grids.len() * shape.iter().product::<usize>() * 16);
    for g in grids {
        for z in &g.data {
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads every grid in a container. Slot indices are assigned by position.
pub fn read_container<R: Read>(mut r: R) -> Result<Vec<CsiGrid>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 40 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(Error::Format("missing CSIG header".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!("unsupported CSIG version {version}")));
    }
    let mut shape = [0usize; 4];
    for (i, d) in shape.iter_mut().enumerate() {
        let off = 8 + 8 * i;
        *d = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
    }
    let per_grid = shape
        .iter()
        .try_fold(16usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("CSIG shape overflows".into()))?;
    let payload = &bytes[40..];
    if per_grid == 0 {
        return if payload.is_empty() {
            Ok(Vec::new())
        } else {
            Err(Error::Format("payload present for empty shape".into()))
        };
    }
    if payload.len() % per_grid != 0 {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a whole number of {per_grid}-byte grids",
            payload.len()
        )));
    }
    let read_f64 = |c: &[u8]| f64::from_le_bytes(c.try_into().unwrap());
    Ok(payload
        .chunks(per_grid)
        .enumerate()
        .map(|(i, chunk)| {
            let data = chunk
                .chunks(16)
                .map(|z| Complex64::new(read_f64(&z[..8]), read_f64(&z[8..])))
                .collect();
            CsiGrid {
                shape,
                data,
                slot_index: i,
                time_origin: 0.0,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(speed: f64) -> ScenarioConfig {
        ScenarioConfig::siso(ChannelType::Umi, speed, Snr::Db(10.0), 5e9).with_seed(3)
    }

    #[test]
    fn doppler_examples() {
        assert_eq!(max_doppler(0.0, 5e9), 0.0);
        assert!((max_doppler(30.0, 5e9) - 500.346).abs() < 1e-3);
        assert!((max_doppler(30.0, 28e9) - 2801.94).abs() < 1e-2);
    }

    #[test]
    fn numerology() {
        let c = cfg(0.0);
        assert!((c.slot_duration() - 0.5e-3).abs() < 1e-18);
        assert_eq!(c.n_symbols, 14);
        assert!(c.is_replication_point());
        assert!(!ScenarioConfig { speed: 5.0, ..c }.is_replication_point());
    }

    #[test]
    fn taps_are_normalised_sorted_and_deterministic() {
        let t = make_taps(&cfg(30.0)).unwrap();
        assert!((t.powers.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(t.delays.windows(2).all(|w| w[0] <= w[1]) && t.delays[0] >= 0.0);
        assert_eq!(t, make_taps(&cfg(30.0)).unwrap());
        assert!((t.rms_delay_spread() - 100e-9).abs() < 1e-15);
        assert!(t.aod.iter().all(|a| a.abs() <= MAX_AOD_RAD));
    }

    #[test]
    fn macro_cells_spread_further_than_micro_cells() {
        for seed in 0..5 {
            let umi = make_taps(&cfg(10.0).with_seed(seed)).unwrap();
            let uma = make_taps(&ScenarioConfig { channel: ChannelType::Uma, ..cfg(10.0) }.with_seed(seed)).unwrap();
            assert!(uma.rms_delay_spread() > umi.rms_delay_spread());
        }
    }

    #[test]
    fn static_channel_repeats_across_slots() {
        let c = cfg(0.0);
        let t = make_taps(&c).unwrap();
        let a = gen_slot(&t, &c, 4).unwrap();
        let b = gen_slot(&t, &c, 5).unwrap();
        assert_eq!(a.data(), b.data());
        assert_ne!(a.slot_index, b.slot_index);
    }

    #[test]
    fn single_zero_delay_tap_is_flat() {
        let c = cfg(30.0);
        let mut t = make_taps(&c).unwrap();
        t.delays = vec![0.0];
        t.powers = vec![1.0];
        t.processes.truncate(1);
        t.aod.truncate(1);
        let g = gen_slot(&t, &c, 0).unwrap();
        for s in 0..14 {
            let first = g.get(s, 0, 0, 0);
            for k in 1..72 {
                assert!((g.get(s, k, 0, 0) - first).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn grid_generation_is_deterministic_and_finite() {
        let c = ScenarioConfig::mimo(ChannelType::Uma, 20.0, Snr::Db(0.0), 28e9).with_seed(9);
        let t = make_taps(&c).unwrap();
        let a = gen_slot(&t, &c, 7).unwrap();
        assert_eq!(a, gen_slot(&make_taps(&c).unwrap(), &c, 7).unwrap());
        assert_eq!(a.shape(), [14, 12, 5, 20]);
        assert!(a.is_finite());
    }

    #[test]
    fn noise_power_follows_snr() {
        let c = cfg(10.0);
        let g = gen_slot(&make_taps(&c).unwrap(), &c, 0).unwrap();
        for snr in [0.0, 30.0] {
            let noisy = add_awgn(&g, snr, 1);
            let noise: f64 = noisy
                .data()
                .iter()
                .zip(g.data())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                / g.data().len() as f64;
            let target = g.mean_power() / 10f64.powf(snr / 10.0);
            assert!((10.0 * (noise / target).log10()).abs() < 0.6, "{snr}");
        }
        assert_eq!(add_awgn(&g, f64::INFINITY, 1), g);
        assert_eq!(add_awgn(&g, 10.0, 5), add_awgn(&g, 10.0, 5));
    }

    #[test]
    fn snr_text_forms() {
        assert_eq!("all".parse::<Snr>().unwrap(), Snr::All);
        assert_eq!("-10".parse::<Snr>().unwrap(), Snr::Db(-10.0));
        assert_eq!("inf".parse::<Snr>().unwrap(), Snr::NOISELESS);
        assert_eq!(Snr::Db(-30.0).to_string(), "-30");
        assert_eq!(serde_json::to_string(&Snr::All).unwrap(), "\"all\"");
        assert_eq!(serde_json::from_str::<Snr>("30").unwrap(), Snr::Db(30.0));
        assert_eq!(serde_json::from_str::<Snr>("\"inf\"").unwrap(), Snr::NOISELESS);
        assert!("loud".parse::<Snr>().is_err());
    }

    #[test]
    fn container_round_trip_and_corruption() {
        let c = ScenarioConfig::mimo(ChannelType::Umi, 30.0, Snr::Db(0.0), 5e9).with_seed(2);
        let t = make_taps(&c).unwrap();
        let grids: Vec<CsiGrid> = (0..3).map(|i| gen_slot(&t, &c, i).unwrap()).collect();
        let mut buf = Vec::new();
        write_container(&mut buf, &grids).unwrap();
        assert_eq!(&buf[..4], b"CSIG");
        let back = read_container(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in grids.iter().zip(&back) {
            assert_eq!(a.data(), b.data());
            assert_eq!(a.shape(), b.shape());
        }
        assert!(matches!(read_container(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_container(&bad[..]), Err(Error::Format(_))));
        let mut bad = buf;
        bad[4] = 9;
        assert!(matches!(read_container(&bad[..]), Err(Error::Format(_))));
    }

    #[test]
    fn scenario_json_round_trip() {
        let c = ScenarioConfig::mimo(ChannelType::Uma, 20.0, Snr::All, 28e9).with_seed(77);
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"UMa\"") && text.contains("\"all\""));
        assert_eq!(serde_json::from_str::<ScenarioConfig>(&text).unwrap(), c);
    }
}
