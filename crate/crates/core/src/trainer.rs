//! Single-layer training on next-slot pairs, evaluation and checkpoints.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attention::{msa_flops, msa_forward, msa_init, msa_tape_forward, MsaParams, MsaVars};
use crate::error::{config, Error, Result};
use crate::numkit::{AdamConfig, AdamState, GradTape, Mat};
use crate::rng::{derive, rng};
use crate::ssm::{
    selective_init, selective_tape_forward, ssm_flops, ssm_init, ssm_tape_forward, time_major,
    SelectiveParams, SelectiveVars, SsmParams, SsmVars,
};
use crate::task::SeqSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Msa,
    Ssm,
    SsmSelective,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Msa => "msa",
            ModelKind::Ssm => "ssm",
            ModelKind::SsmSelective => "ssm_selective",
        }
    }

    fn tag(self) -> u8 {
        match self {
            ModelKind::Msa => 0,
            ModelKind::Ssm => 1,
            ModelKind::SsmSelective => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelKind::Msa),
            1 => Ok(ModelKind::Ssm),
            2 => Ok(ModelKind::SsmSelective),
            t => Err(Error::Format(format!("unknown model tag {t}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "msa" => Ok(ModelKind::Msa),
            "ssm" => Ok(ModelKind::Ssm),
            "ssm_selective" => Ok(ModelKind::SsmSelective),
            other => config(format!("unknown model {other:?}")),
        }
    }
}

mod defaults {
    pub fn epochs() -> usize {
        1000
    }
    pub fn batch_size() -> usize {
        32
    }
    pub fn one() -> usize {
        1
    }
    pub fn tail_window() -> usize {
        100
    }
    pub fn heads() -> usize {
        2
    }
    pub fn state_dim() -> usize {
        64
    }
    pub fn yes() -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelKind,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::one")]
    pub eval_every: usize,
    /// Number of trailing evaluations averaged into the reported MSE.
    #[serde(default = "defaults::tail_window")]
    pub tail_window: usize,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::state_dim")]
    pub state_dim: usize,
    #[serde(default = "defaults::yes")]
    pub skip: bool,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(model: ModelKind) -> Self {
        Self {
            model,
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            eval_every: 1,
            tail_window: defaults::tail_window(),
            adam: AdamConfig::default(),
            heads: defaults::heads(),
            state_dim: defaults::state_dim(),
            skip: true,
            seed: 0,
        }
    }

    pub fn num_evaluations(&self) -> usize {
        self.epochs / self.eval_every.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.tail_window == 0 {
            return config("batch_size, eval_every and tail_window must be at least 1");
        }
        if self.epochs > 0 && self.num_evaluations() < self.tail_window {
            return config(format!(
                "tail_window {} exceeds the {} evaluations of {} epochs every {}",
                self.tail_window,
                self.num_evaluations(),
                self.epochs,
                self.eval_every
            ));
        }
        if self.adam.lr.is_nan() || self.adam.lr <= 0.0 {
            return config("learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Msa(MsaParams),
    Ssm(SsmParams),
    SsmSelective(SelectiveParams),
}

impl Model {
    pub fn init(cfg: &TrainConfig, seq_len: usize, feat_dim: usize, seed: u64) -> Result<Self> {
        Ok(match cfg.model {
            ModelKind::Msa => Model::Msa(msa_init(seq_len, feat_dim, cfg.heads, seed)?),
            ModelKind::Ssm => Model::Ssm(ssm_init(cfg.state_dim, feat_dim, cfg.skip, seed)?),
            ModelKind::SsmSelective => {
                Model::SsmSelective(selective_init(cfg.state_dim, feat_dim, cfg.skip, seed)?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Msa(_) => ModelKind::Msa,
            Model::Ssm(_) => ModelKind::Ssm,
            Model::SsmSelective(_) => ModelKind::SsmSelective,
        }
    }

    pub fn feat_dim(&self) -> usize {
        match self {
            Model::Msa(p) => p.dim,
            Model::Ssm(p) => p.feat_dim,
            Model::SsmSelective(p) => p.feat_dim,
        }
    }

    pub fn tensors(&self) -> Vec<Mat> {
        match self {
            Model::Msa(p) => p.tensors(),
            Model::Ssm(p) => p.tensors(),
            Model::SsmSelective(p) => p.tensors(),
        }
    }

    pub fn set_tensors(&mut self, tensors: Vec<Mat>) -> Result<()> {
        match self {
            Model::Msa(p) => p.set_tensors(tensors),
            Model::Ssm(p) => p.set_tensors(tensors),
            Model::SsmSelective(p) => p.set_tensors(tensors),
        }
    }

    /// Discrete poles inside the unit circle; always true for attention.
    pub fn is_stable(&self) -> bool {
        match self {
            Model::Msa(p) => p.tensors().iter().all(Mat::is_finite),
            Model::Ssm(p) => p.is_stable(),
            Model::SsmSelective(p) => p.tensors().iter().all(Mat::is_finite),
        }
    }

    pub fn predict(&self, x: &Mat) -> Result<Mat> {
        match self {
            Model::Msa(p) => Ok(msa_forward(p, x)?.0),
            Model::Ssm(p) => p.forward(x),
            Model::SsmSelective(p) => p.forward(x),
        }
    }

    /// Mean-square loss over a batch and its gradient per tensor.
    pub fn loss_and_grad(&self, inputs: &[&Mat], targets: &[&Mat]) -> Result<(f64, Vec<Mat>)> {
        let mut tape = GradTape::new();
        let (out, target) = match self {
            Model::Msa(p) => {
                let vars = MsaVars::register(&mut tape, p);
                let out = msa_tape_forward(&mut tape, p, &vars, inputs)?;
                (out, Mat::concat_rows(targets)?)
            }
            Model::Ssm(p) => {
                let vars = SsmVars::register(&mut tape, p);
                (ssm_tape_forward(&mut tape, p, &vars, inputs)?, time_major(targets)?)
            }
            Model::SsmSelective(p) => {
                let vars = SelectiveVars::register(&mut tape, p);
                (selective_tape_forward(&mut tape, p, &vars, inputs)?, time_major(targets)?)
            }
        };
        let target = tape.constant(target);
        let loss = tape.mse(out, target)?;
        let value = tape.value(loss)[(0, 0)];
        Ok((value, tape.backward(loss)?.into_vec()))
    }

    /// Multiply-accumulates of one forward pass over `seq_len` steps.
    ///
    /// The selective variant adds its three `E × F` input maps per step.
    pub fn flops_forward(&self, seq_len: usize) -> u64 {
        match self {
            Model::Msa(p) => msa_flops(seq_len, p.dim, p.heads),
            Model::Ssm(p) => ssm_flops(seq_len, p.feat_dim, p.state_dim),
            Model::SsmSelective(p) => {
                ssm_flops(seq_len, p.feat_dim, p.state_dim)
                    + 3 * (seq_len * p.feat_dim * p.state_dim) as u64
            }
        }
    }
}

pub fn mse(pred: &Mat, target: &Mat) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "mse",
            left: pred.shape(),
            right: target.shape(),
        });
    }
    Ok(pred.sub(target)?.mean_square())
}

/// Mean of per-sample values summed in sorted order, so the result does not
/// depend on the order of the samples.
fn order_free_mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean per-sample MSE of `predict` over `test`.
pub fn evaluate_with(test: &[SeqSample], mut predict: impl FnMut(&Mat) -> Result<Mat>) -> Result<f64> {
    let values = test
        .iter()
        .map(|s| mse(&predict(&s.input)?, &s.target))
        .collect::<Result<Vec<_>>>()?;
    Ok(order_free_mean(values))
}

pub fn evaluate(model: &Model, test: &[SeqSample]) -> Result<f64> {
    evaluate_with(test, |x| model.predict(x))
}

/// Prediction = the observed previous slot.
pub fn copy_baseline(test: &[SeqSample]) -> Result<f64> {
    evaluate_with(test, |x| Ok(x.clone()))
}

/// Prediction = 0.
pub fn zero_baseline(test: &[SeqSample]) -> Result<f64> {
    evaluate_with(test, |x| Ok(Mat::zeros(x.rows(), x.cols())))
}

/// Named test set evaluated during training.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub name: String,
    pub samples: Vec<SeqSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalTrace {
    pub name: String,
    pub n_samples: usize,
    pub history: Vec<f64>,
    /// Mean of the last `tail_window` entries of `history`.
    pub reported_mse: f64,
    pub mse_copy: f64,
    pub mse_zero: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: TrainConfig,
    pub seq_len: usize,
    pub feat_dim: usize,
    pub n_train: usize,
    pub train_loss: Vec<f64>,
    pub evals: Vec<EvalTrace>,
    pub flops_fwd: u64,
    pub seconds: f64,
}

impl RunRecord {
    /// Copy with the wall-clock field cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds: 0.0,
            ..self.clone()
        }
    }

    pub fn eval(&self, name: &str) -> Option<&EvalTrace> {
        self.evals.iter().find(|e| e.name == name)
    }
}

fn dataset_dims(train: &[SeqSample], evals: &[EvalSet]) -> Result<(usize, usize)> {
    let first = train
        .first()
        .ok_or_else(|| Error::Config("training set is empty".into()))?;
    let dims = first.input.shape();
    let all = train.iter().chain(evals.iter().flat_map(|e| &e.samples));
    for s in all {
        if s.input.shape() != dims || s.target.shape() != dims {
            return Err(Error::Shape {
                op: "train",
                left: dims,
                right: s.input.shape(),
            });
        }
    }
    Ok(dims)
}

/// Mini-batch Adam on the mean MSE, evaluating every `eval_every` epochs.
pub fn train(cfg: &TrainConfig, train: &[SeqSample], evals: &[EvalSet]) -> Result<(Model, RunRecord)> {
    cfg.validate()?;
    let (seq_len, feat_dim) = dataset_dims(train, evals)?;
    let started = Instant::now();
    let mut model = Model::init(cfg, seq_len, feat_dim, derive(cfg.seed, 1))?;
    let mut adam = AdamState::new(&model.tensors(), cfg.adam);
    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut histories = vec![Vec::with_capacity(cfg.num_evaluations()); evals.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng(derive(derive(cfg.seed, 2), epoch as u64)));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let inputs: Vec<&Mat> = batch.iter().map(|&i| &train[i].input).collect();
            let targets: Vec<&Mat> = batch.iter().map(|&i| &train[i].target).collect();
            let (loss, grads) = model.loss_and_grad(&inputs, &targets)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("batch loss {loss}"),
                });
            }
            total += loss * batch.len() as f64;
            let mut tensors = model.tensors();
            adam.step(&mut tensors, &grads)?;
            model.set_tensors(tensors)?;
        }
        let loss = total / train.len() as f64;
        log::debug!("{} epoch {epoch}: train loss {loss:.6e}", cfg.model);
        train_loss.push(loss);
        if (epoch + 1) % cfg.eval_every == 0 {
            for (set, hist) in evals.iter().zip(histories.iter_mut()) {
                let v = evaluate(&model, &set.samples)?;
                if !v.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        reason: format!("test MSE on {} is {v}", set.name),
                    });
                }
                hist.push(v);
            }
        }
    }

    let mut traces = Vec::with_capacity(evals.len());
    for (set, history) in evals.iter().zip(histories) {
        let reported_mse = if history.is_empty() {
            evaluate(&model, &set.samples)?
        } else {
            let tail = &history[history.len().saturating_sub(cfg.tail_window)..];
            tail.iter().sum::<f64>() / tail.len() as f64
        };
        traces.push(EvalTrace {
            name: set.name.clone(),
            n_samples: set.samples.len(),
            reported_mse,
            mse_copy: copy_baseline(&set.samples)?,
            mse_zero: zero_baseline(&set.samples)?,
            history,
        });
    }
    let record = RunRecord {
        config: cfg.clone(),
        seq_len,
        feat_dim,
        n_train: train.len(),
        train_loss,
        evals: traces,
        flops_fwd: model.flops_forward(seq_len),
        seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, record))
}

const CKPT_MAGIC: &[u8; 5] = b"CKPT1";

fn model_dims(model: &Model) -> Vec<u64> {
    match model {
        Model::Msa(p) => vec![p.seq_len as u64, p.dim as u64, p.heads as u64],
        Model::Ssm(p) => vec![p.state_dim as u64, p.feat_dim as u64, p.skip.is_some() as u64],
        Model::SsmSelective(p) => vec![p.state_dim as u64, p.feat_dim as u64, p.skip.is_some() as u64],
    }
}

/// Number of stored floats implied by a header, checked before anything is allocated.
fn expected_floats(kind: ModelKind, dims: &[u64]) -> Result<u64> {
    let bad = || Error::Format(format!("invalid {kind} dimensions {dims:?}"));
    let [a, b, c] = <[u64; 3]>::try_from(dims).map_err(|_| bad())?;
    let mul = |x: u64, y: u64| x.checked_mul(y).ok_or_else(bad);
    match kind {
        ModelKind::Msa => {
            let (d, h) = (b, c);
            if a == 0 || d == 0 || h == 0 || d % h != 0 {
                return Err(bad());
            }
            mul(4, mul(d, d)?)
        }
        ModelKind::Ssm | ModelKind::SsmSelective => {
            let (f, e, skip) = (a, b, c);
            if f == 0 || e == 0 || skip > 1 {
                return Err(bad());
            }
            let fe = mul(f, e)?;
            let base = 2 * f + 2 * fe + skip * e;
            Ok(if kind == ModelKind::Ssm {
                base
            } else {
                base + 3 * fe + 2 * f
            })
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    if !model.is_stable() {
        return Err(Error::Numeric("refusing to checkpoint an unstable model".into()));
    }
    let dims = model_dims(model);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&[model.kind().tag()])?;
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&d.to_le_bytes())?;
    }
    let mut buf = Vec::new();
    for t in model.tensors() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let short = || Error::Format("checkpoint truncated".into());
    if bytes.len() < 10 || &bytes[..5] != CKPT_MAGIC {
        return Err(Error::Format("missing CKPT1 header".into()));
    }
    let kind = ModelKind::from_tag(bytes[5])?;
    let ndims = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let body = 10 + ndims.checked_mul(8).ok_or_else(short)?;
    if bytes.len() < body {
        return Err(short());
    }
    let dims: Vec<u64> = bytes[10..body]
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let n = expected_floats(kind, &dims)?;
    let payload = &bytes[body..];
    if payload.len() as u64 != n.saturating_mul(8) {
        return Err(Error::Format(format!(
            "checkpoint holds {} payload bytes, header implies {}",
            payload.len(),
            n.saturating_mul(8)
        )));
    }
    let cfg = TrainConfig {
        heads: dims[2] as usize,
        state_dim: dims[0] as usize,
        skip: dims[2] == 1,
        ..TrainConfig::new(kind)
    };
    let (seq_len, feat_dim) = match kind {
        ModelKind::Msa => (dims[0] as usize, dims[1] as usize),
        _ => (1, dims[1] as usize),
    };
    let mut model = Model::init(&cfg, seq_len, feat_dim, 0)?;
    let mut values = payload
        .chunks(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let tensors = model
        .tensors()
        .iter()
        .map(|t| Mat::from_vec(t.rows(), t.cols(), values.by_ref().take(t.len()).collect()))
        .collect::<Result<Vec<_>>>()?;
    model.set_tensors(tensors)?;
    if !model.is_stable() {
        return Err(Error::Numeric("checkpoint holds an unstable model".into()));
    }
    Ok(model)
}

pub fn checkpoint_save(model: &Model, path: &Path) -> Result<()> {
    write_checkpoint(BufWriter::new(fs::File::create(path)?), model)
}

pub fn checkpoint_load(path: &Path) -> Result<Model> {
    read_checkpoint(fs::File::open(path)?)
}

/// Loads a checkpoint and insists on its model type.
pub fn checkpoint_load_as(path: &Path, kind: ModelKind) -> Result<Model> {
    let model = checkpoint_load(path)?;
    if model.kind() != kind {
        return Err(Error::Format(format!(
            "model tag mismatch: checkpoint holds {}, expected {kind}",
            model.kind()
        )));
    }
    Ok(model)
}
