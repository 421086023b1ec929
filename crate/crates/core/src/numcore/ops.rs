//! Plain tensor ops without gradient recording.

use super::{kernels, Tensor};
use crate::error::{ensure, Result};

/// Matrix product on the trailing two axes, batched over identical leading axes.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    kernels::matmul(a, b)
}

pub fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    kernels::transpose_last2(x)
}

/// Max-subtracted softmax over the last axis. Rejects non-finite input.
pub fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    kernels::softmax_lastdim(x)
}

/// Normalizes the last axis to zero mean / unit variance (ε = 1e-5), then
/// applies `gain` and `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    kernels::layer_norm(x, gain, bias).map(|(y, _, _)| y)
}

pub fn silu(x: &Tensor) -> Tensor {
    kernels::silu(x)
}

/// `softmax(q kᵀ / √d) v`.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    ensure!(q.rank() >= 2 && k.rank() == q.rank() && v.rank() == q.rank(), InvalidShape,
        "attention ranks {:?} {:?} {:?}", q.shape(), k.shape(), v.shape());
    let r = q.rank();
    ensure!(q.shape()[r - 1] == k.shape()[r - 1], ShapeMismatch,
        "query/key width {:?} vs {:?}", q.shape(), k.shape());
    ensure!(k.shape()[r - 2] == v.shape()[r - 2], ShapeMismatch,
        "key/value length {:?} vs {:?}", k.shape(), v.shape());
    let d = q.shape()[r - 1] as f32;
    let scores = matmul(q, &transpose_last2(k)?)?.scale(1.0 / d.sqrt());
    matmul(&softmax_lastdim(&scores)?, v)
}

pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    kernels::concat(parts, axis)
}

pub fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    kernels::add_bias(x, b)
}
