//! Discrete-time linear state-space layer.
//!
//! The continuous system `h' = A h + B x`, `y = C h + D x` is discretized with
//! the bilinear transform using a learned per-state step `Δ`:
//!
//! ```text
//! Ā = (I − Δ/2·A)⁻¹ (I + Δ/2·A)
//! B̄ = (I − Δ/2·A)⁻¹ Δ B
//! C̄ = C
//! ```
//!
//! `A` is kept diagonal with entries `−exp(a)`, so every discretized pole lies
//! strictly inside the unit circle for any reachable parameter value. The
//! `D x` term is an optional learned diagonal skip.
//!
//! The layer runs either as a recurrent scan or as a causal convolution with
//! the materialised kernel `K̄[t] = C̄ Āᵗ B̄`; both give the same output for a
//! zero initial state.

use crate::error::{config, Error, Result};
use crate::numkit::{matmul, matmul_nt, softplus, FlopCounter, GradTape, Mat, Var};
use crate::rng::rng;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub state_dim: usize,
    pub feat_dim: usize,
    /// `1 × F`; the continuous poles are `−exp(a_log)`.
    pub a_log: Mat,
    /// `F × E`.
    pub b: Mat,
    /// `E × F`.
    pub c: Mat,
    /// `1 × F`; `Δ = exp(log_delta)`.
    pub log_delta: Mat,
    /// `1 × E` diagonal skip, when enabled.
    pub skip: Option<Mat>,
}

/// Discretized system matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmDiscrete {
    pub a_bar: Mat,
    pub b_bar: Mat,
    pub c_bar: Mat,
    pub skip: Option<Vec<f64>>,
}

/// Convolution kernel `K̄[t] = C̄ Āᵗ B̄`, one `E × E` matrix per lag.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmKernel {
    pub taps: Vec<Mat>,
    pub skip: Option<Vec<f64>>,
}

impl SsmKernel {
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Default initialisation: poles at −1/2, `Δ` log-uniform in `[1e-3, 1e-1]`,
/// `B`, `C` and the skip uniform with variance `1/E`, `1/F` and `1/E`.
pub fn ssm_init(state_dim: usize, feat_dim: usize, skip: bool, seed: u64) -> Result<SsmParams> {
    if state_dim == 0 || feat_dim == 0 {
        return config("state-space dimensions must be at least 1");
    }
    let mut r = rng(seed);
    let log_delta = Mat::from_vec(
        1,
        state_dim,
        (0..state_dim)
            .map(|_| r.random_range(1e-3f64.ln()..=1e-1f64.ln()))
            .collect(),
    )?;
    let in_bound = (3.0 / feat_dim as f64).sqrt();
    let out_bound = (3.0 / state_dim as f64).sqrt();
    let b = Mat::uniform(state_dim, feat_dim, in_bound, &mut r);
    let c = Mat::uniform(feat_dim, state_dim, out_bound, &mut r);
    let skip = skip.then(|| Mat::uniform(1, feat_dim, in_bound, &mut r));
    Ok(SsmParams {
        state_dim,
        feat_dim,
        a_log: Mat::filled(1, state_dim, 0.5f64.ln()),
        b,
        c,
        log_delta,
        skip,
    })
}

impl SsmParams {
    /// Continuous diagonal poles `−exp(a_log)`.
    pub fn poles(&self) -> Vec<f64> {
        self.a_log.data().iter().map(|a| -a.exp()).collect()
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.log_delta.data().iter().map(|l| l.exp()).collect()
    }

    /// Diagonal of `Ā` and the per-state input gain `Δ / (1 − Δλ/2)`.
    fn bilinear_diag(&self) -> (Vec<f64>, Vec<f64>) {
        self.poles()
            .into_iter()
            .zip(self.deltas())
            .map(|(lam, dt)| {
                let half = 0.5 * dt * lam;
                ((1.0 + half) / (1.0 - half), dt / (1.0 - half))
            })
            .unzip()
    }

    pub fn a_bar_diag(&self) -> Vec<f64> {
        self.bilinear_diag().0
    }

    /// True when every discretized pole has modulus strictly below one.
    pub fn is_stable(&self) -> bool {
        self.a_bar_diag().iter().all(|a| a.is_finite() && a.abs() < 1.0)
    }

    /// Tensors in checkpoint order: `a_log, b, c, log_delta[, skip]`.
    pub fn tensors(&self) -> Vec<Mat> {
        let mut out = vec![
            self.a_log.clone(),
            self.b.clone(),
            self.c.clone(),
            self.log_delta.clone(),
        ];
        if let Some(s) = &self.skip {
            out.push(s.clone());
        }
        out
    }

    pub fn set_tensors(&mut self, tensors: Vec<Mat>) -> Result<()> {
        let (f, e) = (self.state_dim, self.feat_dim);
        let mut want = vec![(1, f), (f, e), (e, f), (1, f)];
        if self.skip.is_some() {
            want.push((1, e));
        }
        check_shapes("ssm_set_tensors", &want, &tensors)?;
        let mut it = tensors.into_iter();
        self.a_log = it.next().unwrap();
        self.b = it.next().unwrap();
        self.c = it.next().unwrap();
        self.log_delta = it.next().unwrap();
        if self.skip.is_some() {
            self.skip = it.next();
        }
        Ok(())
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.feat_dim {
            return Err(Error::Shape {
                op: "ssm_forward",
                left: (x.rows(), self.feat_dim),
                right: x.shape(),
            });
        }
        Ok(())
    }

    /// Recurrent forward from a zero state using the diagonal structure directly.
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        self.check_input(x)?;
        let (a_bar, gain) = self.bilinear_diag();
        let mut h = matmul_nt(x, &self.b)?;
        for t in 0..h.rows() {
            for f in 0..self.state_dim {
                let prev = if t == 0 { 0.0 } else { h[(t - 1, f)] };
                h[(t, f)] = a_bar[f] * prev + gain[f] * h[(t, f)];
            }
        }
        let mut y = matmul_nt(&h, &self.c)?;
        if let Some(s) = &self.skip {
            add_skip(&mut y, x, s.data());
        }
        Ok(y)
    }
}

fn add_skip(y: &mut Mat, x: &Mat, skip: &[f64]) {
    for t in 0..y.rows() {
        for ((yv, xv), s) in y.row_mut(t).iter_mut().zip(x.row(t)).zip(skip) {
            *yv += s * xv;
        }
    }
}

fn check_shapes(op: &'static str, want: &[(usize, usize)], got: &[Mat]) -> Result<()> {
    if want.len() != got.len() {
        return config(format!("{op}: expected {} tensors, got {}", want.len(), got.len()));
    }
    for (w, g) in want.iter().zip(got) {
        if *w != g.shape() {
            return Err(Error::Shape {
                op,
                left: *w,
                right: g.shape(),
            });
        }
    }
    Ok(())
}

/// Bilinear discretization of the diagonal parameterization (closed form per state).
pub fn ssm_discretize(p: &SsmParams) -> Result<SsmDiscrete> {
    let (a_bar, gain) = p.bilinear_diag();
    if a_bar.iter().chain(&gain).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite discretized parameters".into()));
    }
    let mut b_bar = p.b.clone();
    for (f, g) in gain.iter().enumerate() {
        b_bar.row_mut(f).iter_mut().for_each(|v| *v *= g);
    }
    Ok(SsmDiscrete {
        a_bar: Mat::diag(&a_bar),
        b_bar,
        c_bar: p.c.clone(),
        skip: p.skip.as_ref().map(|s| s.data().to_vec()),
    })
}

/// Bilinear discretization of a general `(A, B, C)` with per-state steps,
/// via an explicit inverse of the resolvent `I − diag(Δ)·A/2`.
pub fn discretize_dense(
    a: &Mat,
    b: &Mat,
    c: &Mat,
    delta: &[f64],
    skip: Option<Vec<f64>>,
) -> Result<SsmDiscrete> {
    let f = a.rows();
    if a.cols() != f || b.rows() != f || c.cols() != f || delta.len() != f {
        return Err(Error::Shape {
            op: "discretize_dense",
            left: a.shape(),
            right: (b.rows(), c.cols()),
        });
    }
    let half = matmul(&Mat::diag(delta), a)?.scale(0.5);
    let eye = Mat::identity(f);
    let resolvent = eye.sub(&half)?.inverse()?;
    let a_bar = matmul(&resolvent, &eye.add(&half)?)?;
    let b_bar = matmul(&resolvent, &matmul(&Mat::diag(delta), b)?)?;
    Ok(SsmDiscrete {
        a_bar,
        b_bar,
        c_bar: c.clone(),
        skip,
    })
}

impl SsmDiscrete {
    pub fn state_dim(&self) -> usize {
        self.a_bar.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.b_bar.cols()
    }
}

/// `h_t = Ā h_{t−1} + B̄ x_t`, `y_t = C̄ h_t (+ s ⊙ x_t)` for every row `x_t` of `x`.
pub fn ssm_scan(d: &SsmDiscrete, x: &Mat, h0: &[f64]) -> Result<Mat> {
    ssm_scan_counted(d, x, h0, &mut FlopCounter::new())
}

/// [`ssm_scan`] with multiply-accumulates of the state, input and output maps tallied.
pub fn ssm_scan_counted(
    d: &SsmDiscrete,
    x: &Mat,
    h0: &[f64],
    flops: &mut FlopCounter,
) -> Result<Mat> {
    let (f, e) = (d.state_dim(), d.feat_dim());
    if x.cols() != e || h0.len() != f {
        return Err(Error::Shape {
            op: "ssm_scan",
            left: (h0.len(), e),
            right: x.shape(),
        });
    }
    let mut h = h0.to_vec();
    let mut next = vec![0.0; f];
    let mut y = Mat::zeros(x.rows(), e);
    for t in 0..x.rows() {
        let xt = x.row(t);
        for (i, n) in next.iter_mut().enumerate() {
            let a_row = d.a_bar.row(i);
            let b_row = d.b_bar.row(i);
            *n = a_row.iter().zip(&h).map(|(a, v)| a * v).sum::<f64>()
                + b_row.iter().zip(xt).map(|(b, v)| b * v).sum::<f64>();
        }
        flops.product(f, f, 1);
        flops.product(f, e, 1);
        std::mem::swap(&mut h, &mut next);
        for (o, yv) in y.row_mut(t).iter_mut().enumerate() {
            *yv = d.c_bar.row(o).iter().zip(&h).map(|(c, v)| c * v).sum();
        }
        flops.product(e, f, 1);
    }
    if let Some(s) = &d.skip {
        add_skip(&mut y, x, s);
    }
    Ok(y)
}

/// Kernel of length `len` by repeated state propagation (no matrix powers).
pub fn ssm_kernel(d: &SsmDiscrete, len: usize) -> Result<SsmKernel> {
    if len == 0 {
        return config("kernel length must be at least 1");
    }
    let mut prop = d.b_bar.clone();
    let mut taps = Vec::with_capacity(len);
    for t in 0..len {
        taps.push(matmul(&d.c_bar, &prop)?);
        if t + 1 < len {
            prop = matmul(&d.a_bar, &prop)?;
        }
    }
    Ok(SsmKernel {
        taps,
        skip: d.skip.clone(),
    })
}

/// Causal convolution `y_t = Σ_{s≤t} K̄[s] x_{t−s}` from a zero initial state.
pub fn ssm_conv(k: &SsmKernel, x: &Mat) -> Result<Mat> {
    if k.len() < x.rows() {
        return config(format!(
            "kernel of length {} is shorter than the {}-step input",
            k.len(),
            x.rows()
        ));
    }
    let e = k.taps[0].rows();
    if x.cols() != k.taps[0].cols() {
        return Err(Error::Shape {
            op: "ssm_conv",
            left: k.taps[0].shape(),
            right: x.shape(),
        });
    }
    let mut y = Mat::zeros(x.rows(), e);
    for t in 0..x.rows() {
        for s in 0..=t {
            let tap = &k.taps[s];
            let xs = x.row(t - s);
            for (o, yv) in y.row_mut(t).iter_mut().enumerate() {
                *yv += tap.row(o).iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    if let Some(s) = &k.skip {
        add_skip(&mut y, x, s);
    }
    Ok(y)
}

/// Recurrent-mode multiply-accumulates: `T·(F² + 2·F·E)`.
pub fn ssm_flops(seq_len: usize, feat_dim: usize, state_dim: usize) -> u64 {
    let (t, e, f) = (seq_len as u64, feat_dim as u64, state_dim as u64);
    t * (f * f + 2 * f * e)
}

/// Rearranges equally shaped `T × E` sequences into one `T·B × E` matrix
/// whose block `t` holds row `t` of every sequence.
pub fn time_major(seqs: &[&Mat]) -> Result<Mat> {
    let (t_len, e) = seqs.first().map_or((0, 0), |s| s.shape());
    let b = seqs.len();
    let mut out = Mat::zeros(t_len * b, e);
    for (j, s) in seqs.iter().enumerate() {
        if s.shape() != (t_len, e) {
            return Err(Error::Shape {
                op: "time_major",
                left: (t_len, e),
                right: s.shape(),
            });
        }
        for t in 0..t_len {
            out.row_mut(t * b + j).copy_from_slice(s.row(t));
        }
    }
    Ok(out)
}

pub struct SsmVars {
    pub a_log: Var,
    pub b: Var,
    pub c: Var,
    pub log_delta: Var,
    pub skip: Option<Var>,
}

impl SsmVars {
    pub fn register(tape: &mut GradTape, p: &SsmParams) -> Self {
        Self {
            a_log: tape.param(p.a_log.clone()),
            b: tape.param(p.b.clone()),
            c: tape.param(p.c.clone()),
            log_delta: tape.param(p.log_delta.clone()),
            skip: p.skip.as_ref().map(|s| tape.param(s.clone())),
        }
    }
}

/// Records the LTI scan for a batch and returns outputs in [`time_major`] layout.
pub fn ssm_tape_forward(
    tape: &mut GradTape,
    p: &SsmParams,
    vars: &SsmVars,
    inputs: &[&Mat],
) -> Result<Var> {
    for x in inputs {
        p.check_input(x)?;
    }
    let batch = inputs.len();
    let t_len = inputs.first().map_or(0, |x| x.rows());
    let x_all = tape.constant(time_major(inputs)?);

    let e = tape.exp(vars.a_log);
    let lam = tape.scale(e, -1.0);
    let dt = tape.exp(vars.log_delta);
    let dl = tape.mul(dt, lam)?;
    let half = tape.scale(dl, 0.5);
    let num = tape.add_scalar(half, 1.0);
    let neg = tape.scale(half, -1.0);
    let den = tape.add_scalar(neg, 1.0);
    let a_bar = tape.div(num, den)?;
    let gain = tape.div(dt, den)?;

    let bt = tape.transpose(vars.b);
    let b_bar_t = tape.mul_row(bt, gain)?;
    let u_all = tape.matmul(x_all, b_bar_t)?;
    let mut states = Vec::with_capacity(t_len);
    let mut h = tape.slice_rows(u_all, 0, batch)?;
    states.push(h);
    for t in 1..t_len {
        let u = tape.slice_rows(u_all, t * batch, (t + 1) * batch)?;
        let decayed = tape.mul_row(h, a_bar)?;
        h = tape.add(decayed, u)?;
        states.push(h);
    }
    let h_all = tape.concat_rows(&states)?;
    let y = tape.matmul_nt(h_all, vars.c)?;
    match vars.skip {
        Some(s) => {
            let direct = tape.mul_row(x_all, s)?;
            tape.add(y, direct)
        }
        None => Ok(y),
    }
}

/// Input-selective variant: per step,
/// `Δ_t = softplus(x_t W_Δ + b_Δ)`, `B_t = diag(x_t W_B + b_B)·B`,
/// `C_t = C·diag(x_t W_C + b_C)`, discretized with the same bilinear rule.
///
/// With all three weight maps zero, `b_B = b_C = 1` and `softplus(b_Δ) = Δ`
/// this is the LTI layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveParams {
    pub state_dim: usize,
    pub feat_dim: usize,
    pub a_log: Mat,
    pub b: Mat,
    pub c: Mat,
    pub skip: Option<Mat>,
    /// `E × F` maps and `1 × F` biases.
    pub w_delta: Mat,
    pub b_delta: Mat,
    pub w_b: Mat,
    pub b_b: Mat,
    pub w_c: Mat,
    pub b_c: Mat,
}

fn softplus_inv(y: f64) -> f64 {
    // ln(e^y − 1), stable for small y
    y + (-(-y).exp_m1()).ln()
}

pub fn selective_init(state_dim: usize, feat_dim: usize, skip: bool, seed: u64) -> Result<SelectiveParams> {
    let base = ssm_init(state_dim, feat_dim, skip, seed)?;
    let mut r = rng(crate::rng::derive(seed, 0x5e1));
    let map_bound = 0.1 * (3.0 / feat_dim as f64).sqrt();
    let b_delta = base.log_delta.map(|l| softplus_inv(l.exp()));
    Ok(SelectiveParams {
        state_dim,
        feat_dim,
        a_log: base.a_log,
        b: base.b,
        c: base.c,
        skip: base.skip,
        w_delta: Mat::uniform(feat_dim, state_dim, map_bound, &mut r),
        b_delta,
        w_b: Mat::uniform(feat_dim, state_dim, map_bound, &mut r),
        b_b: Mat::filled(1, state_dim, 1.0),
        w_c: Mat::uniform(feat_dim, state_dim, map_bound, &mut r),
        b_c: Mat::filled(1, state_dim, 1.0),
    })
}

impl SelectiveParams {
    /// The LTI layer this reduces to when the weight maps are zeroed.
    pub fn from_lti(p: &SsmParams) -> Self {
        let (f, e) = (p.state_dim, p.feat_dim);
        Self {
            state_dim: f,
            feat_dim: e,
            a_log: p.a_log.clone(),
            b: p.b.clone(),
            c: p.c.clone(),
            skip: p.skip.clone(),
            w_delta: Mat::zeros(e, f),
            b_delta: p.log_delta.map(|l| softplus_inv(l.exp())),
            w_b: Mat::zeros(e, f),
            b_b: Mat::filled(1, f, 1.0),
            w_c: Mat::zeros(e, f),
            b_c: Mat::filled(1, f, 1.0),
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<Mat> {
        let mut out = vec![self.a_log.clone(), self.b.clone(), self.c.clone()];
        out.extend([
            self.w_delta.clone(),
            self.b_delta.clone(),
            self.w_b.clone(),
            self.b_b.clone(),
            self.w_c.clone(),
            self.b_c.clone(),
        ]);
        if let Some(s) = &self.skip {
            out.push(s.clone());
        }
        out
    }

    pub fn set_tensors(&mut self, tensors: Vec<Mat>) -> Result<()> {
        let (f, e) = (self.state_dim, self.feat_dim);
        let mut want = vec![(1, f), (f, e), (e, f), (e, f), (1, f), (e, f), (1, f), (e, f), (1, f)];
        if self.skip.is_some() {
            want.push((1, e));
        }
        check_shapes("selective_set_tensors", &want, &tensors)?;
        let mut it = tensors.into_iter();
        self.a_log = it.next().unwrap();
        self.b = it.next().unwrap();
        self.c = it.next().unwrap();
        self.w_delta = it.next().unwrap();
        self.b_delta = it.next().unwrap();
        self.w_b = it.next().unwrap();
        self.b_b = it.next().unwrap();
        self.w_c = it.next().unwrap();
        self.b_c = it.next().unwrap();
        if self.skip.is_some() {
            self.skip = it.next();
        }
        Ok(())
    }

    /// Time-varying parameters admit no fixed convolution kernel.
    pub fn kernel(&self, _len: usize) -> Result<SsmKernel> {
        config("selective state-space layer has no convolution mode")
    }

    /// Pure recurrent forward from a zero state, one step at a time.
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        selective_scan(self, x)
    }
}

/// Reference recurrent scan of the selective layer.
pub fn selective_scan(p: &SelectiveParams, x: &Mat) -> Result<Mat> {
    let (f, e) = (p.state_dim, p.feat_dim);
    if x.cols() != e {
        return Err(Error::Shape {
            op: "selective_scan",
            left: (x.rows(), e),
            right: x.shape(),
        });
    }
    let lam: Vec<f64> = p.a_log.data().iter().map(|a| -a.exp()).collect();
    let delta = matmul(x, &p.w_delta)?;
    let beta = matmul(x, &p.w_b)?;
    let gamma = matmul(x, &p.w_c)?;
    let xb = matmul_nt(x, &p.b)?;
    let mut h = vec![0.0; f];
    let mut y = Mat::zeros(x.rows(), e);
    let mut g = vec![0.0; f];
    for t in 0..x.rows() {
        for i in 0..f {
            let dt = softplus(delta[(t, i)] + p.b_delta[(0, i)]);
            let half = 0.5 * dt * lam[i];
            let a_bar = (1.0 + half) / (1.0 - half);
            let gain = dt / (1.0 - half);
            let bt = beta[(t, i)] + p.b_b[(0, i)];
            h[i] = a_bar * h[i] + gain * bt * xb[(t, i)];
            g[i] = (gamma[(t, i)] + p.b_c[(0, i)]) * h[i];
        }
        for (o, yv) in y.row_mut(t).iter_mut().enumerate() {
            *yv = p.c.row(o).iter().zip(&g).map(|(c, v)| c * v).sum();
        }
    }
    if let Some(s) = &p.skip {
        add_skip(&mut y, x, s.data());
    }
    Ok(y)
}

pub struct SelectiveVars {
    pub a_log: Var,
    pub b: Var,
    pub c: Var,
    pub w_delta: Var,
    pub b_delta: Var,
    pub w_b: Var,
    pub b_b: Var,
    pub w_c: Var,
    pub b_c: Var,
    pub skip: Option<Var>,
}

impl SelectiveVars {
    pub fn register(tape: &mut GradTape, p: &SelectiveParams) -> Self {
        Self {
            a_log: tape.param(p.a_log.clone()),
            b: tape.param(p.b.clone()),
            c: tape.param(p.c.clone()),
            w_delta: tape.param(p.w_delta.clone()),
            b_delta: tape.param(p.b_delta.clone()),
            w_b: tape.param(p.w_b.clone()),
            b_b: tape.param(p.b_b.clone()),
            w_c: tape.param(p.w_c.clone()),
            b_c: tape.param(p.b_c.clone()),
            skip: p.skip.as_ref().map(|s| tape.param(s.clone())),
        }
    }
}

/// Records the selective scan for a batch; outputs in [`time_major`] layout.
pub fn selective_tape_forward(
    tape: &mut GradTape,
    p: &SelectiveParams,
    v: &SelectiveVars,
    inputs: &[&Mat],
) -> Result<Var> {
    let batch = inputs.len();
    let t_len = inputs.first().map_or(0, |x| x.rows());
    let x_all = tape.constant(time_major(inputs)?);
    if tape.value(x_all).cols() != p.feat_dim {
        return Err(Error::Shape {
            op: "selective_tape_forward",
            left: (t_len, p.feat_dim),
            right: tape.value(x_all).shape(),
        });
    }
    let e = tape.exp(v.a_log);
    let lam = tape.scale(e, -1.0);

    let pre = tape.matmul(x_all, v.w_delta)?;
    let pre = tape.add_row(pre, v.b_delta)?;
    let dt = tape.softplus(pre);
    let dl = tape.mul_row(dt, lam)?;
    let half = tape.scale(dl, 0.5);
    let num = tape.add_scalar(half, 1.0);
    let neg = tape.scale(half, -1.0);
    let den = tape.add_scalar(neg, 1.0);
    let a_bar = tape.div(num, den)?;
    let gain = tape.div(dt, den)?;

    let beta = tape.matmul(x_all, v.w_b)?;
    let beta = tape.add_row(beta, v.b_b)?;
    let gamma = tape.matmul(x_all, v.w_c)?;
    let gamma = tape.add_row(gamma, v.b_c)?;
    let xb = tape.matmul_nt(x_all, v.b)?;
    let u = tape.mul(xb, gain)?;
    let u_all = tape.mul(u, beta)?;

    let mut states = Vec::with_capacity(t_len);
    let mut h = tape.slice_rows(u_all, 0, batch)?;
    states.push(h);
    for t in 1..t_len {
        let rows = (t * batch, (t + 1) * batch);
        let u_t = tape.slice_rows(u_all, rows.0, rows.1)?;
        let a_t = tape.slice_rows(a_bar, rows.0, rows.1)?;
        let decayed = tape.mul(h, a_t)?;
        h = tape.add(decayed, u_t)?;
        states.push(h);
    }
    let h_all = tape.concat_rows(&states)?;
    let gated = tape.mul(h_all, gamma)?;
    let y = tape.matmul_nt(gated, v.c)?;
    match v.skip {
        Some(s) => {
            let direct = tape.mul_row(x_all, s)?;
            tape.add(y, direct)
        }
        None => Ok(y),
    }
}
