//! Numeric kernels for the 1D CNN: layers with forward and reverse-mode
//! passes, a recording network, Adam, and finite-difference checking.
//!
//! Everything is generic over [`Real`] so training can run in `f32` while
//! gradient verification runs in `f64`.

mod adam;
mod gemm;
mod gradcheck;
mod layers;
pub mod network;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub use adam::{adam_step, AdamState};
pub use gemm::{matmul, matmul_ld};
pub use gradcheck::{GradCheck, GradCheckReport};
pub use layers::{
    conv1d_backward, conv1d_forward, cross_entropy_loss, dense_backward, dense_forward, dropout_backward,
    dropout_forward, fused_softmax_ce_grad, maxpool1d_backward, maxpool1d_forward, relu_backward, relu_forward,
    softmax, softmax_backward, Conv1d, Dense, DropoutMode, Layer, CE_CLIP,
};
pub use network::{Gradients, Network};
pub use tensor::Tensor3;

/// Floating-point element type of tensors and parameters.
pub trait Real: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Strided GEMM, `C ← α·A·B + β·C`.
    ///
    /// # Safety
    /// All pointers must be valid for every index reachable through the given
    /// dimensions and strides; see [`gemm::matmul`] for the checked wrapper.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}
