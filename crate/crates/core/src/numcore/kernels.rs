//! Forward and backward kernels shared by the plain ops and the tape.

use super::Tensor;
use crate::error::{ensure, Result};

pub(crate) const LN_EPS: f32 = 1e-5;

/// `c = alpha * a @ b + beta * c` for one strided matrix triple.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || n == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() >= m * n);
    // SAFETY: the extents and strides above address only elements inside
    // `a`, `b` and `c`, and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Leading-axis batch count and the trailing (rows, cols) of a rank ≥ 2 tensor.
fn split_batch(t: &Tensor) -> Result<(usize, usize, usize)> {
    let s = t.shape();
    ensure!(s.len() >= 2, InvalidShape, "matrix op needs rank >= 2, got {:?}", s);
    let r = s.len();
    Ok((s[..r - 2].iter().product(), s[r - 2], s[r - 1]))
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, m, k) = split_batch(a)?;
    let (bb, k2, n) = split_batch(b)?;
    let (ra, rb) = (a.rank(), b.rank());
    ensure!(
        ra == rb && a.shape()[..ra - 2] == b.shape()[..rb - 2] && k == k2,
        ShapeMismatch,
        "matmul {:?} x {:?}",
        a.shape(),
        b.shape()
    );
    debug_assert_eq!(ba, bb);
    let mut out = vec![0.0f32; ba * m * n];
    for i in 0..ba {
        gemm(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            (k, 1),
            &b.data()[i * k * n..(i + 1) * k * n],
            (n, 1),
            0.0,
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    let mut shape = a.shape().to_vec();
    shape[ra - 1] = n;
    Tensor::new(&shape, out)
}

/// Gradients of `c = a @ b` given `gc`; returns (ga, gb).
pub(crate) fn matmul_backward(a: &Tensor, b: &Tensor, gc: &[f32]) -> (Vec<f32>, Vec<f32>) {
    let (batch, m, k) = split_batch(a).expect("validated in forward");
    let n = b.shape()[b.rank() - 1];
    let mut ga = vec![0.0f32; a.numel()];
    let mut gb = vec![0.0f32; b.numel()];
    for i in 0..batch {
        let ai = &a.data()[i * m * k..(i + 1) * m * k];
        let bi = &b.data()[i * k * n..(i + 1) * k * n];
        let gi = &gc[i * m * n..(i + 1) * m * n];
        // ga = gc @ b^T
        gemm(m, n, k, gi, (n, 1), bi, (1, n), 0.0, &mut ga[i * m * k..(i + 1) * m * k]);
        // gb = a^T @ gc
        gemm(k, m, n, ai, (1, k), gi, (n, 1), 0.0, &mut gb[i * k * n..(i + 1) * k * n]);
    }
    (ga, gb)
}

pub(crate) fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    ensure!(r >= 2, InvalidShape, "transpose needs rank >= 2");
    let mut axes: Vec<usize> = (0..r).collect();
    axes.swap(r - 2, r - 1);
    permute(x, &axes)
}

pub(crate) fn permute(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let r = x.rank();
    ensure!(axes.len() == r, InvalidShape, "permutation {:?} for rank {}", axes, r);
    let mut seen = vec![false; r];
    for &a in axes {
        ensure!(a < r && !seen[a], InvalidShape, "not a permutation: {:?}", axes);
        seen[a] = true;
    }
    let in_shape = x.shape();
    let mut in_strides = vec![1usize; r];
    for i in (0..r.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let src = x.data();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return Tensor::new(&out_shape, out);
    }
    let mut idx = vec![0usize; r];
    let mut offset = 0usize;
    for _ in 0..src.len() {
        out.push(src[offset]);
        for d in (0..r).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

fn last_dim(x: &Tensor) -> Result<usize> {
    ensure!(x.rank() >= 1, InvalidShape, "op needs rank >= 1");
    let d = x.shape()[x.rank() - 1];
    ensure!(d >= 1, InvalidShape, "last extent must be >= 1");
    Ok(d)
}

pub(crate) fn softmax_lastdim(x: &Tensor) -> Result<Tensor> {
    ensure!(x.all_finite(), Numeric, "softmax input contains non-finite values");
    let d = last_dim(x)?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let inv = 1.0 / sum;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    Tensor::new(x.shape(), out)
}

pub(crate) fn softmax_backward(y: &[f32], gy: &[f32], d: usize) -> Vec<f32> {
    let mut gx = vec![0.0; y.len()];
    for ((yr, gr), out) in y.chunks(d).zip(gy.chunks(d)).zip(gx.chunks_mut(d)) {
        let dot: f32 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for j in 0..d {
            out[j] = yr[j] * (gr[j] - dot);
        }
    }
    gx
}

/// Layer norm forward; also returns the normalized values and per-row
/// reciprocal std needed for the backward pass.
pub(crate) fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let d = last_dim(x)?;
    ensure!(
        gain.shape() == [d] && bias.shape() == [d],
        ShapeMismatch,
        "layer_norm gain {:?} / bias {:?} for last extent {}",
        gain.shape(),
        bias.shape(),
        d
    );
    let rows = x.numel() / d;
    let mut xhat = vec![0.0f32; x.numel()];
    let mut rstd = vec![0.0f32; rows];
    let mut out = vec![0.0f32; x.numel()];
    for (r, row) in x.data().chunks(d).enumerate() {
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((Tensor::new(x.shape(), out)?, xhat, rstd))
}

/// Returns (gx, ggain, gbias).
pub(crate) fn layer_norm_backward(
    xhat: &[f32],
    rstd: &[f32],
    gain: &[f32],
    gy: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let d = gain.len();
    let mut gx = vec![0.0; xhat.len()];
    let mut ggain = vec![0.0; d];
    let mut gbias = vec![0.0; d];
    let mut gh = vec![0.0f32; d];
    for (r, (hr, gr)) in xhat.chunks(d).zip(gy.chunks(d)).enumerate() {
        let mut sum_gh = 0.0f32;
        let mut sum_gh_h = 0.0f32;
        for j in 0..d {
            ggain[j] += gr[j] * hr[j];
            gbias[j] += gr[j];
            gh[j] = gr[j] * gain[j];
            sum_gh += gh[j];
            sum_gh_h += gh[j] * hr[j];
        }
        let scale = rstd[r] / d as f32;
        for j in 0..d {
            gx[r * d + j] = scale * (d as f32 * gh[j] - sum_gh - hr[j] * sum_gh_h);
        }
    }
    (gx, ggain, gbias)
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn silu(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

pub(crate) fn silu_backward(x: &[f32], gy: &[f32]) -> Vec<f32> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

pub(crate) fn add_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = last_dim(x)?;
    ensure!(b.shape() == [d], ShapeMismatch, "bias {:?} for last extent {}", b.shape(), d);
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        row.iter_mut().zip(b.data()).for_each(|(v, bv)| *v += bv);
    }
    Tensor::new(x.shape(), out)
}

/// Concatenation along `axis`; all other extents must agree.
pub(crate) fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    ensure!(!parts.is_empty(), InvalidShape, "concat of nothing");
    let base = parts[0].shape();
    ensure!(axis < base.len(), InvalidShape, "concat axis {} for rank {}", axis, base.len());
    for p in parts {
        let s = p.shape();
        ensure!(
            s.len() == base.len()
                && s.iter().zip(base).enumerate().all(|(i, (a, b))| i == axis || a == b),
            ShapeMismatch,
            "concat {:?} with {:?} on axis {}",
            base,
            s,
            axis
        );
    }
    let outer: usize = base[..axis].iter().product();
    let inner: usize = base[axis + 1..].iter().product();
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let chunk = p.shape()[axis] * inner;
            out.extend_from_slice(&p.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = base.to_vec();
    shape[axis] = total;
    Tensor::new(&shape, out)
}

/// Splits a gradient of a concatenation back into per-part gradients.
pub(crate) fn concat_backward(shapes: &[Vec<usize>], axis: usize, g: &[f32]) -> Vec<Vec<f32>> {
    let outer: usize = shapes[0][..axis].iter().product();
    let inner: usize = shapes[0][axis + 1..].iter().product();
    let total: usize = shapes.iter().map(|s| s[axis]).sum();
    let mut parts: Vec<Vec<f32>> =
        shapes.iter().map(|s| Vec::with_capacity(s.iter().product())).collect();
    for o in 0..outer {
        let mut off = o * total * inner;
        for (p, s) in parts.iter_mut().zip(shapes) {
            let chunk = s[axis] * inner;
            p.extend_from_slice(&g[off..off + chunk]);
            off += chunk;
        }
    }
    parts
}
