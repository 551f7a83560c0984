//! One multi-head self-attention layer without biases, positional encoding,
//! residual path or normalisation.
//!
//! Each head projects the full input with its own `D × 3·D_h` block
//! `[W_q | W_k | W_v]`, attends with `softmax(Q Kᵀ / √D_h)`, and the head
//! outputs are concatenated in head order (head 0 occupies columns
//! `[0, D_h)`) before the square output projection.

use crate::error::{config, Error, Result};
use crate::numkit::{matmul, matmul_nt, softmax_rows, FlopCounter, GradTape, Mat, Var};
use crate::rng::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MsaParams {
    pub seq_len: usize,
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    /// Per head, `dim × 3·head_dim` with columns `[Q | K | V]`.
    pub w_qkv: Vec<Mat>,
    pub w_proj: Mat,
}

#[derive(Debug, Clone)]
pub struct HeadActivations {
    pub q: Mat,
    pub k: Mat,
    pub v: Mat,
    pub attn: Mat,
    pub out: Mat,
}

#[derive(Debug, Clone)]
pub struct MsaActivations {
    pub heads: Vec<HeadActivations>,
    pub y: Mat,
}

/// Parameters drawn uniformly with variance `1/dim`.
pub fn msa_init(seq_len: usize, dim: usize, heads: usize, seed: u64) -> Result<MsaParams> {
    if seq_len == 0 || dim == 0 || heads == 0 {
        return config("attention dimensions must be at least 1");
    }
    if !dim.is_multiple_of(heads) {
        return config(format!("{heads} heads do not divide embedding dim {dim}"));
    }
    let head_dim = dim / heads;
    let bound = (3.0 / dim as f64).sqrt();
    let mut r = rng(seed);
    let w_qkv = (0..heads)
        .map(|_| Mat::uniform(dim, 3 * head_dim, bound, &mut r))
        .collect();
    let w_proj = Mat::uniform(dim, dim, bound, &mut r);
    Ok(MsaParams {
        seq_len,
        dim,
        heads,
        head_dim,
        w_qkv,
        w_proj,
    })
}

impl MsaParams {
    /// Learnable matrices in checkpoint order: every head block, then the projection.
    pub fn tensors(&self) -> Vec<Mat> {
        let mut out = self.w_qkv.clone();
        out.push(self.w_proj.clone());
        out
    }

    pub fn set_tensors(&mut self, tensors: Vec<Mat>) -> Result<()> {
        if tensors.len() != self.heads + 1 {
            return config(format!(
                "expected {} attention tensors, got {}",
                self.heads + 1,
                tensors.len()
            ));
        }
        for (i, t) in tensors.iter().enumerate() {
            let want = if i < self.heads {
                (self.dim, 3 * self.head_dim)
            } else {
                (self.dim, self.dim)
            };
            if t.shape() != want {
                return Err(Error::Shape {
                    op: "msa_set_tensors",
                    left: want,
                    right: t.shape(),
                });
            }
        }
        let mut tensors = tensors;
        self.w_proj = tensors.pop().expect("length checked");
        self.w_qkv = tensors;
        Ok(())
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.dim {
            return Err(Error::Shape {
                op: "msa_forward",
                left: (self.seq_len, self.dim),
                right: x.shape(),
            });
        }
        Ok(())
    }
}

/// Forward pass keeping every intermediate.
pub fn msa_forward(p: &MsaParams, x: &Mat) -> Result<(Mat, MsaActivations)> {
    msa_forward_counted(p, x, &mut FlopCounter::new())
}

/// Forward pass that also tallies multiply-accumulates of the four matrix-product steps.
pub fn msa_forward_counted(
    p: &MsaParams,
    x: &Mat,
    flops: &mut FlopCounter,
) -> Result<(Mat, MsaActivations)> {
    p.check_input(x)?;
    let n = x.rows();
    let dh = p.head_dim;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    for w in &p.w_qkv {
        let qkv = matmul(x, w)?;
        flops.product(n, p.dim, 3 * dh);
        let q = qkv.slice_cols(0, dh);
        let k = qkv.slice_cols(dh, 2 * dh);
        let v = qkv.slice_cols(2 * dh, 3 * dh);
        let scores = matmul_nt(&q, &k)?.scale(inv_sqrt);
        flops.product(n, dh, n);
        let attn = softmax_rows(&scores);
        let out = matmul(&attn, &v)?;
        flops.product(n, n, dh);
        heads.push(HeadActivations { q, k, v, attn, out });
    }
    let outs: Vec<&Mat> = heads.iter().map(|h| &h.out).collect();
    let concat = Mat::concat_cols(&outs)?;
    let y = matmul(&concat, &p.w_proj)?;
    flops.product(n, p.dim, p.dim);
    Ok((y.clone(), MsaActivations { heads, y }))
}

/// Closed-form multiply-accumulate count: `3ND² + N²D + N²D + ND²`.
pub fn msa_flops(seq_len: usize, dim: usize, _heads: usize) -> u64 {
    let (n, d) = (seq_len as u64, dim as u64);
    4 * n * d * d + 2 * n * n * d
}

/// Handles to the attention parameters once registered on a tape.
pub struct MsaVars {
    pub w_qkv: Vec<Var>,
    pub w_proj: Var,
}

impl MsaVars {
    pub fn register(tape: &mut GradTape, p: &MsaParams) -> Self {
        let w_qkv = p.w_qkv.iter().map(|w| tape.param(w.clone())).collect();
        let w_proj = tape.param(p.w_proj.clone());
        Self { w_qkv, w_proj }
    }
}

/// Records the forward pass for a batch of equally shaped sequences and
/// returns the outputs stacked row-wise (`batch·N × D`).
pub fn msa_tape_forward(
    tape: &mut GradTape,
    p: &MsaParams,
    vars: &MsaVars,
    inputs: &[&Mat],
) -> Result<Var> {
    let n = inputs.first().map_or(0, |x| x.rows());
    for x in inputs {
        p.check_input(x)?;
        if x.rows() != n {
            return Err(Error::Shape {
                op: "msa_tape_forward",
                left: (n, p.dim),
                right: x.shape(),
            });
        }
    }
    let dh = p.head_dim;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let stacked = Mat::concat_rows(inputs)?;
    let x = tape.constant(stacked);
    let qkv: Vec<Var> = vars
        .w_qkv
        .iter()
        .map(|&w| tape.matmul(x, w))
        .collect::<Result<_>>()?;
    let mut per_sample = Vec::with_capacity(inputs.len());
    for b in 0..inputs.len() {
        let mut head_outs = Vec::with_capacity(p.heads);
        for &h in &qkv {
            let rows = tape.slice_rows(h, b * n, (b + 1) * n)?;
            let q = tape.slice_cols(rows, 0, dh)?;
            let k = tape.slice_cols(rows, dh, 2 * dh)?;
            let v = tape.slice_cols(rows, 2 * dh, 3 * dh)?;
            let s = tape.matmul_nt(q, k)?;
            let s = tape.scale(s, inv_sqrt);
            let m = tape.softmax_rows(s);
            head_outs.push(tape.matmul(m, v)?);
        }
        per_sample.push(tape.concat_cols(&head_outs)?);
    }
    let concat = tape.concat_rows(&per_sample)?;
    tape.matmul(concat, vars.w_proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::grad_check;

    fn random_input(n: usize, d: usize, seed: u64) -> Mat {
        Mat::uniform(n, d, 1.0, &mut rng(seed))
    }

    #[test]
    fn siso_geometry_gives_two_heads_of_72() {
        let p = msa_init(14, 144, 2, 0).unwrap();
        assert_eq!(p.head_dim, 72);
        assert_eq!(p.w_qkv[0].shape(), (144, 216));
        assert_eq!(p.w_proj.shape(), (144, 144));
    }

    #[test]
    fn init_is_deterministic_and_scaled() {
        let a = msa_init(14, 144, 2, 7).unwrap();
        assert_eq!(a, msa_init(14, 144, 2, 7).unwrap());
        assert_ne!(a, msa_init(14, 144, 2, 8).unwrap());
        let var = a.w_proj.mean_square();
        assert!((var - 1.0 / 144.0).abs() < 0.1 / 144.0, "{var}");
    }

    #[test]
    fn indivisible_heads_rejected() {
        assert!(matches!(msa_init(14, 144, 5, 0), Err(Error::Config(_))));
        assert!(matches!(msa_init(0, 144, 2, 0), Err(Error::Config(_))));
    }

    #[test]
    fn single_token_attends_to_itself() {
        let p = msa_init(1, 6, 2, 1).unwrap();
        let x = random_input(1, 6, 2);
        let (y, acts) = msa_forward(&p, &x).unwrap();
        let vs: Vec<&Mat> = acts.heads.iter().map(|h| &h.v).collect();
        for h in &acts.heads {
            assert_eq!(h.attn.data(), &[1.0]);
        }
        let expected = matmul(&Mat::concat_cols(&vs).unwrap(), &p.w_proj).unwrap();
        assert_eq!(y, expected);
    }

    #[test]
    fn zero_input_gives_uniform_attention_and_zero_output() {
        let p = msa_init(5, 8, 2, 3).unwrap();
        let (y, acts) = msa_forward(&p, &Mat::zeros(5, 8)).unwrap();
        assert_eq!(y, Mat::zeros(5, 8));
        for h in &acts.heads {
            assert!(h.attn.data().iter().all(|&m| (m - 0.2).abs() < 1e-15));
        }
    }

    #[test]
    fn row_permutation_permutes_output() {
        let p = msa_init(4, 8, 2, 4).unwrap();
        let x = random_input(4, 8, 5);
        let perm = [2usize, 0, 3, 1];
        let mut xp = Mat::zeros(4, 8);
        for (i, &src) in perm.iter().enumerate() {
            xp.row_mut(i).copy_from_slice(x.row(src));
        }
        let (y, _) = msa_forward(&p, &x).unwrap();
        let (yp, _) = msa_forward(&p, &xp).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for c in 0..8 {
                assert!((yp[(i, c)] - y[(src, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let p = msa_init(4, 8, 2, 4).unwrap();
        assert!(matches!(
            msa_forward(&p, &Mat::zeros(4, 7)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn flops_examples() {
        assert_eq!(msa_flops(14, 144, 2), 1_217_664);
        assert_eq!(msa_flops(1, 1, 1), 6);
        let quad = |n: usize| 2 * (n as u64) * (n as u64) * 144;
        assert_eq!(quad(28), 4 * quad(14));
        let p = msa_init(14, 144, 2, 0).unwrap();
        let mut c = FlopCounter::new();
        msa_forward_counted(&p, &Mat::zeros(14, 144), &mut c).unwrap();
        assert_eq!(c.macs, 1_217_664);
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let p = msa_init(4, 8, 2, 9).unwrap();
        let xs: Vec<Mat> = (0..3).map(|s| random_input(4, 8, 100 + s)).collect();
        let refs: Vec<&Mat> = xs.iter().collect();
        let mut tape = GradTape::new();
        let vars = MsaVars::register(&mut tape, &p);
        let y = msa_tape_forward(&mut tape, &p, &vars, &refs).unwrap();
        for (b, x) in xs.iter().enumerate() {
            let (yb, _) = msa_forward(&p, x).unwrap();
            let got = tape.value(y).slice_rows(b * 4, b * 4 + 4);
            assert!(got.max_abs_diff(&yb).unwrap() < 1e-14);
        }
    }

    #[test]
    fn mse_gradient_passes_grad_check() {
        let p = msa_init(4, 8, 2, 21).unwrap();
        let xs: Vec<Mat> = (0..2).map(|s| random_input(4, 8, 200 + s)).collect();
        let ts: Vec<Mat> = (0..2).map(|s| random_input(4, 8, 300 + s)).collect();
        let loss = |theta: &[Mat]| -> Result<(f64, Vec<Mat>)> {
            let mut q = p.clone();
            q.set_tensors(theta.to_vec())?;
            let mut tape = GradTape::new();
            let vars = MsaVars::register(&mut tape, &q);
            let xr: Vec<&Mat> = xs.iter().collect();
            let y = msa_tape_forward(&mut tape, &q, &vars, &xr)?;
            let tr: Vec<&Mat> = ts.iter().collect();
            let t = tape.constant(Mat::concat_rows(&tr)?);
            let l = tape.mse(y, t)?;
            let value = tape.value(l)[(0, 0)];
            Ok((value, tape.backward(l)?.into_vec()))
        };
        let theta = p.tensors();
        let (_, g) = loss(&theta).unwrap();
        let err = grad_check(|t| Ok(loss(t)?.0), &theta, &g, 1e-6).unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
