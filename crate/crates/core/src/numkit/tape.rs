//! Reverse-mode differentiation over a fixed set of matrix primitives.
//!
//! A [`GradTape`] records every primitive applied during one forward pass.
//! [`GradTape::backward`] walks the record in exact reverse order and returns
//! the gradient of a scalar loss with respect to every registered parameter.
//! A tape can be differentiated once.

use super::mat::{matmul, matmul_nt, matmul_tn, softmax_rows, Mat};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Exp(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Softmax(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Gradients of a scalar loss, one per registered parameter in registration order.
#[derive(Debug, Clone)]
pub struct Gradients(Vec<Mat>);

impl Gradients {
    pub fn get(&self, index: usize) -> &Mat {
        &self.0[index]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Mat] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Mat> {
        self.0
    }
}

#[derive(Default)]
pub struct GradTape {
    nodes: Vec<Node>,
    params: Vec<Var>,
    consumed: bool,
}

fn shape_err(op: &'static str, a: &Mat, b: &Mat) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a learnable parameter. Gradients are returned in the order of these calls.
    pub fn param(&mut self, value: Mat) -> Var {
        let v = self.push(value, Op::Param);
        self.params.push(v);
        v
    }

    /// Records a constant input; no gradient is reported for it.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    /// `a ⊙ r` with the `1 × cols` row `r` broadcast over every row of `a`.
    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("mul_row", av, rv));
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *x *= s;
            }
        }
        Ok(self.push(out, Op::MulRow(a, r)))
    }

    /// `a ⊙ c` with the `rows × 1` column `c` broadcast over every column of `a`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(c));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(shape_err("mul_col", av, cv));
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            let s = cv.data()[i];
            out.row_mut(i).iter_mut().for_each(|x| *x *= s);
        }
        Ok(self.push(out, Op::MulCol(a, c)))
    }

    /// `a + r` with the `1 × cols` row `r` broadcast over every row of `a`.
    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(r));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (x, s) in out.row_mut(i).iter_mut().zip(rv.data()) {
                *x += s;
            }
        }
        Ok(self.push(out, Op::AddRow(a, r)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: av.shape(),
                right: (start, end),
            });
        }
        let v = av.slice_cols(start, end);
        Ok(self.push(v, Op::SliceCols(a, start)))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let av = self.value(a);
        if start > end || end > av.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: av.shape(),
                right: (start, end),
            });
        }
        let v = av.slice_rows(start, end);
        Ok(self.push(v, Op::SliceRows(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Mat::concat_cols(&mats)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Mat::concat_rows(&mats)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = Mat::filled(1, 1, self.value(a).mean());
        self.push(v, Op::Mean(a))
    }

    /// Mean squared difference between `pred` and `target`, as tape primitives.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Gradient of the `1 × 1` value `loss` with respect to every registered parameter.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage("tape already consumed by backward".into()));
        }
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Leaf => {}
                Op::Param => {
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_nt(&g, val(*b))?;
                    let gb = matmul_tn(val(*a), &g)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MatMulNt(a, b) => {
                    let ga = matmul(&g, val(*b))?;
                    let gb = matmul_tn(&g, val(*a))?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone())?;
                    accumulate(&mut grads, *b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.scale(-1.0))?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Mul(a, b) => {
                    let ga = g.hadamard(val(*b))?;
                    let gb = g.hadamard(val(*a))?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::Div(a, b) => {
                    let ga = g.zip_map(val(*b), "div_grad", |g, y| g / y)?;
                    let gb = g
                        .hadamard(&node.value)?
                        .zip_map(val(*b), "div_grad", |gq, y| -gq / y)?;
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *b, gb)?;
                }
                Op::MulRow(a, r) => {
                    let (av, rv) = (val(*a), val(*r));
                    let mut ga = g.clone();
                    let mut gr = Mat::zeros(1, rv.cols());
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga[(i, j)] *= rv[(0, j)];
                            gr[(0, j)] += g[(i, j)] * av[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *r, gr)?;
                }
                Op::MulCol(a, c) => {
                    let (av, cv) = (val(*a), val(*c));
                    let mut ga = g.clone();
                    let mut gc = Mat::zeros(cv.rows(), 1);
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            ga[(i, j)] *= cv[(i, 0)];
                            gc[(i, 0)] += g[(i, j)] * av[(i, j)];
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                    accumulate(&mut grads, *c, gc)?;
                }
                Op::AddRow(a, r) => {
                    let mut gr = Mat::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (acc, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *acc += x;
                        }
                    }
                    accumulate(&mut grads, *r, gr)?;
                    accumulate(&mut grads, *a, g)?;
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g.scale(*s))?,
                Op::AddScalar(a) => accumulate(&mut grads, *a, g)?,
                Op::Exp(a) => accumulate(&mut grads, *a, g.hadamard(&node.value)?)?,
                Op::Tanh(a) => {
                    let ga = g.zip_map(&node.value, "tanh_grad", |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Sigmoid(a) => {
                    let ga = g.zip_map(&node.value, "sigmoid_grad", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Softplus(a) => {
                    let ga = g.zip_map(val(*a), "softplus_grad", |g, x| g * sigmoid(x))?;
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let dot: f64 = g.row(i).iter().zip(y.row(i)).map(|(a, b)| a * b).sum();
                        for j in 0..y.cols() {
                            ga[(i, j)] = y[(i, j)] * (g[(i, j)] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose())?,
                Op::SliceCols(a, start) => {
                    let av = val(*a);
                    let mut ga = Mat::zeros(av.rows(), av.cols());
                    for i in 0..g.rows() {
                        ga.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::SliceRows(a, start) => {
                    let av = val(*a);
                    let mut ga = Mat::zeros(av.rows(), av.cols());
                    let w = av.cols();
                    ga.data_mut()[start * w..(start + g.rows()) * w].copy_from_slice(g.data());
                    accumulate(&mut grads, *a, ga)?;
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = val(*p).cols();
                        accumulate(&mut grads, *p, g.slice_cols(off, off + w))?;
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = val(*p).rows();
                        accumulate(&mut grads, *p, g.slice_rows(off, off + h))?;
                        off += h;
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    accumulate(&mut grads, *a, Mat::filled(r, c, g[(0, 0)]))?;
                }
                Op::Mean(a) => {
                    let (r, c) = val(*a).shape();
                    let n = (r * c) as f64;
                    accumulate(&mut grads, *a, Mat::filled(r, c, g[(0, 0)] / n))?;
                }
            }
        }

        let out = self
            .params
            .iter()
            .map(|p| {
                grads[p.0].take().unwrap_or_else(|| {
                    let (r, c) = self.nodes[p.0].value.shape();
                    Mat::zeros(r, c)
                })
            })
            .collect();
        Ok(Gradients(out))
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) -> Result<()> {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}
