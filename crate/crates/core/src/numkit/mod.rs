//! Dense numeric core shared by both sequence layers.

mod adam;
mod gradcheck;
mod mat;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::grad_check;
pub use mat::{matmul, matmul_nt, matmul_tn, softmax_rows, CMat, Mat};
pub use tape::{GradTape, Gradients, Var};
pub(crate) use tape::softplus;

/// Multiply-accumulate counter threaded through instrumented forward passes.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FlopCounter {
    pub macs: u64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Product of an `m × k` by a `k × n` matrix.
    pub fn product(&mut self, m: usize, k: usize, n: usize) {
        self.macs += (m * k * n) as u64;
    }
}
