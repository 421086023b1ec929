//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every op of one forward pass eagerly. [`Var`] is a
//! cheap handle into the tape. [`Tape::backward`] walks the record in
//! reverse and returns a [`Gradients`] table; the tape is dropped with the
//! forward pass.
//!
//! Leaves created with `requires_grad = false` (and every value computed
//! only from such leaves) never receive a gradient.

use std::cell::{Ref, RefCell};

use super::kernels;
use super::Tensor;
use crate::error::{ensure, Error, Result};

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    AddBias(usize, usize),
    MatMul(usize, usize),
    Permute(usize, Vec<usize>),
    Reshape(usize),
    Softmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f32>, rstd: Vec<f32> },
    Silu(usize),
    Concat { parts: Vec<usize>, axis: usize },
    Select { x: usize, indices: Vec<usize> },
    Sum(usize),
    Mean(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Back-propagates from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        ensure!(std::ptr::eq(loss.tape, self), Contract, "loss belongs to another tape");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        ensure!(
            root.value.numel() == 1,
            Contract,
            "backward needs a scalar loss, got shape {:?}",
            root.value.shape()
        );
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads: Vec::new() });
        }
        grads[loss.id] = Some(vec![1.0]);

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let want = |i: usize| nodes[i].requires_grad;
            let mut acc = |i: usize, contrib: Vec<f32>| match &mut grads[i] {
                Some(existing) => existing.iter_mut().zip(contrib).for_each(|(e, c)| *e += c),
                slot @ None => *slot = Some(contrib),
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    if want(*b) {
                        acc(*b, g.clone());
                    }
                    if want(*a) {
                        acc(*a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if want(*b) {
                        acc(*b, g.iter().map(|v| -v).collect());
                    }
                    if want(*a) {
                        acc(*a, g);
                    }
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if want(*a) {
                        acc(*a, g.iter().zip(vb).map(|(g, b)| g * b).collect());
                    }
                    if want(*b) {
                        acc(*b, g.iter().zip(va).map(|(g, a)| g * a).collect());
                    }
                }
                Op::Scale(a, c) => acc(*a, g.iter().map(|v| v * c).collect()),
                Op::AddBias(x, b) => {
                    if want(*b) {
                        let d = nodes[*b].value.numel();
                        let mut gb = vec![0.0; d];
                        for row in g.chunks(d) {
                            gb.iter_mut().zip(row).for_each(|(s, v)| *s += v);
                        }
                        acc(*b, gb);
                    }
                    if want(*x) {
                        acc(*x, g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) =
                        kernels::matmul_backward(&nodes[*a].value, &nodes[*b].value, &g);
                    if want(*a) {
                        acc(*a, ga);
                    }
                    if want(*b) {
                        acc(*b, gb);
                    }
                }
                Op::Permute(a, axes) => {
                    let gt = Tensor::new(node.value.shape(), g)?;
                    let back = kernels::permute(&gt, &kernels::inverse_permutation(axes))?;
                    acc(*a, back.into_data());
                }
                Op::Reshape(a) => acc(*a, g),
                Op::Softmax(a) => {
                    let d = *node.value.shape().last().expect("rank >= 1");
                    acc(*a, kernels::softmax_backward(node.value.data(), &g, d));
                }
                Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                    let (gx, ggain, gbias) = kernels::layer_norm_backward(
                        xhat,
                        rstd,
                        nodes[*gain].value.data(),
                        &g,
                    );
                    if want(*gain) {
                        acc(*gain, ggain);
                    }
                    if want(*bias) {
                        acc(*bias, gbias);
                    }
                    if want(*x) {
                        acc(*x, gx);
                    }
                }
                Op::Silu(a) => acc(*a, kernels::silu_backward(nodes[*a].value.data(), &g)),
                Op::Concat { parts, axis } => {
                    let shapes: Vec<Vec<usize>> =
                        parts.iter().map(|&p| nodes[p].value.shape().to_vec()).collect();
                    for (p, gp) in parts.iter().zip(kernels::concat_backward(&shapes, *axis, &g)) {
                        if want(*p) {
                            acc(*p, gp);
                        }
                    }
                }
                Op::Select { x, indices } => {
                    let src = &nodes[*x].value;
                    let row: usize = src.shape()[1..].iter().product();
                    let mut gx = vec![0.0; src.numel()];
                    for (k, &i) in indices.iter().enumerate() {
                        let dst = &mut gx[i * row..(i + 1) * row];
                        dst.iter_mut().zip(&g[k * row..(k + 1) * row]).for_each(|(d, v)| *d += v);
                    }
                    acc(*x, gx);
                }
                Op::Sum(a) => acc(*a, vec![g[0]; nodes[*a].value.numel()]),
                Op::Mean(a) => {
                    let n = nodes[*a].value.numel();
                    acc(*a, vec![g[0] / n as f32; n]);
                }
            }
        }
        let grads = nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match (&node.op, g) {
                (Op::Leaf, Some(g)) if node.requires_grad => {
                    Some(Tensor::new(node.value.shape(), g).expect("gradient matches its leaf"))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Gradients of the loss with respect to every grad-requiring leaf.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when it received none.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&var.shape()))
    }
}

fn same_tape(a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    if std::ptr::eq(a.tape, b.tape) {
        Ok(())
    } else {
        Err(Error::Contract("vars from different tapes".into()))
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Ref<'t, Tensor> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.rg(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let v = self.value().add(&other.value())?;
        Ok(self.binary(other, v, Op::Add(self.id, other.id)))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let v = self.value().sub(&other.value())?;
        Ok(self.binary(other, v, Op::Sub(self.id, other.id)))
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let v = self.value().mul(&other.value())?;
        Ok(self.binary(other, v, Op::Mul(self.id, other.id)))
    }

    pub fn scale(self, c: f32) -> Var<'t> {
        let v = self.value().scale(c);
        self.unary(v, Op::Scale(self.id, c))
    }

    /// Adds a `[d]` bias to every row of a tensor whose last extent is `d`.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &bias)?;
        let v = kernels::add_bias(&self.value(), &bias.value())?;
        Ok(self.binary(bias, v, Op::AddBias(self.id, bias.id)))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &other)?;
        let v = kernels::matmul(&self.value(), &other.value())?;
        Ok(self.binary(other, v, Op::MatMul(self.id, other.id)))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let v = kernels::permute(&self.value(), axes)?;
        Ok(self.unary(v, Op::Permute(self.id, axes.to_vec())))
    }

    pub fn transpose_last2(self) -> Result<Var<'t>> {
        let r = self.value().rank();
        ensure!(r >= 2, InvalidShape, "transpose needs rank >= 2");
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let v = self.value().reshape(shape)?;
        Ok(self.unary(v, Op::Reshape(self.id)))
    }

    pub fn softmax_lastdim(self) -> Result<Var<'t>> {
        let v = kernels::softmax_lastdim(&self.value())?;
        Ok(self.unary(v, Op::Softmax(self.id)))
    }

    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        same_tape(&self, &gain)?;
        same_tape(&self, &bias)?;
        let (v, xhat, rstd) = kernels::layer_norm(&self.value(), &gain.value(), &bias.value())?;
        let rg = self.tape.rg(&[self.id, gain.id, bias.id]);
        let op = Op::LayerNorm { x: self.id, gain: gain.id, bias: bias.id, xhat, rstd };
        Ok(self.tape.push(v, op, rg))
    }

    pub fn silu(self) -> Var<'t> {
        let v = kernels::silu(&self.value());
        self.unary(v, Op::Silu(self.id))
    }

    /// Gathers slices along the leading axis (indices may repeat).
    pub fn select_axis0(self, indices: &[usize]) -> Result<Var<'t>> {
        let v = self.value().select_axis0(indices)?;
        Ok(self.unary(v, Op::Select { x: self.id, indices: indices.to_vec() }))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        ensure!(!parts.is_empty(), InvalidShape, "concat of nothing");
        let tape = parts[0].tape;
        for p in parts {
            same_tape(&parts[0], p)?;
        }
        let values: Vec<Ref<'_, Tensor>> = parts.iter().map(|p| p.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|r| &**r).collect();
        let v = kernels::concat(&refs, axis)?;
        drop(values);
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.rg(&ids);
        Ok(tape.push(v, Op::Concat { parts: ids, axis }, rg))
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum() as f32);
        self.unary(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().mean() as f32);
        self.unary(v, Op::Mean(self.id))
    }

    /// `mean((self - target)^2)`.
    pub fn mse(self, target: Var<'t>) -> Result<Var<'t>> {
        let d = self.sub(target)?;
        Ok(d.mul(d)?.mean())
    }

    /// `softmax(q kᵀ / √d) v` over the trailing two axes, batched over the
    /// leading ones.
    pub fn attention(q: Var<'t>, k: Var<'t>, v: Var<'t>) -> Result<Var<'t>> {
        let d = *q.shape().last().ok_or_else(|| Error::InvalidShape("scalar query".into()))?;
        let scores = q.matmul(k.transpose_last2()?)?.scale(1.0 / (d as f32).sqrt());
        scores.softmax_lastdim()?.matmul(v)
    }
}
