//! Building blocks shared by the projector and the denoiser.

use super::params::{Bound, ParamGroup, ParamId, ParamStore};
use crate::error::{ensure, Result};
use crate::numcore::{Rng, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `N(0, 1/fan_in)` weights, zero bias.
    Scaled,
    /// All zeros; used for residual output projections of temporal blocks.
    Zero,
}

/// Registers parameters under a common name prefix and group.
pub struct Builder<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut Rng,
    pub group: ParamGroup,
}

impl Builder<'_> {
    pub fn with_group(&mut self, group: ParamGroup) -> Builder<'_> {
        Builder { store: self.store, rng: self.rng, group }
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        self.store.push(name, value, self.group)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f32) -> Result<ParamId> {
        let v = self.rng.randn(shape)?.scale(std);
        self.param(name, v)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(bld: &mut Builder<'_>, name: &str, d_in: usize, d_out: usize, init: Init) -> Result<Self> {
        let w = match init {
            Init::Scaled => bld.normal(&format!("{name}.w"), &[d_in, d_out], 1.0 / (d_in as f32).sqrt())?,
            Init::Zero => bld.param(&format!("{name}.w"), Tensor::zeros(&[d_in, d_out]))?,
        };
        let b = bld.param(&format!("{name}.b"), Tensor::zeros(&[d_out]))?;
        Ok(Self { w, b, d_in, d_out })
    }

    /// Applies to the last axis of `x`, any leading shape.
    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let rows = shape.iter().product::<usize>() / self.d_in.max(1);
        let y = x.reshape(&[rows, self.d_in])?.matmul(p.get(self.w))?.add_bias(p.get(self.b))?;
        let mut out = shape;
        *out.last_mut().expect("rank >= 1") = self.d_out;
        y.reshape(&out)
    }
}

#[derive(Clone, Debug)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl Norm {
    pub fn new(bld: &mut Builder<'_>, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: bld.param(&format!("{name}.g"), Tensor::full(&[dim], 1.0))?,
            bias: bld.param(&format!("{name}.b"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(p.get(self.gain), p.get(self.bias))
    }
}

/// Single-head attention with separate query and key/value inputs.
#[derive(Clone, Debug)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl Attention {
    pub fn new(bld: &mut Builder<'_>, name: &str, dim: usize, out_init: Init) -> Result<Self> {
        Ok(Self {
            q: Linear::new(bld, &format!("{name}.q"), dim, dim, Init::Scaled)?,
            k: Linear::new(bld, &format!("{name}.k"), dim, dim, Init::Scaled)?,
            v: Linear::new(bld, &format!("{name}.v"), dim, dim, Init::Scaled)?,
            o: Linear::new(bld, &format!("{name}.o"), dim, dim, out_init)?,
            heads: 1,
        })
    }

    pub fn with_heads(mut self, heads: usize) -> Result<Self> {
        let dim = self.q.d_out;
        ensure!(heads >= 1 && dim % heads == 0, Config, "{} heads do not divide dim {}", heads, dim);
        self.heads = heads;
        Ok(self)
    }

    /// `xq: [B, Lq, d]`, `xkv: [B, Lk, d]` → `[B, Lq, d]`.
    pub fn forward<'t>(&self, p: &Bound<'t>, xq: Var<'t>, xkv: Var<'t>) -> Result<Var<'t>> {
        let q = self.q.forward(p, xq)?;
        let k = self.k.forward(p, xkv)?;
        let v = self.v.forward(p, xkv)?;
        if self.heads == 1 {
            return self.o.forward(p, Var::attention(q, k, v)?);
        }
        let (b, lq, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
        let h = self.heads;
        let split = |x: Var<'t>| -> Result<Var<'t>> {
            let l = x.shape()[1];
            x.reshape(&[b, l, h, d / h])?.permute(&[0, 2, 1, 3])?.reshape(&[b * h, l, d / h])
        };
        let out = Var::attention(split(q)?, split(k)?, split(v)?)?;
        let merged = out.reshape(&[b, h, lq, d / h])?.permute(&[0, 2, 1, 3])?.reshape(&[b, lq, d])?;
        self.o.forward(p, merged)
    }
}

/// `linear → SiLU → linear` with hidden width `2·dim`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(bld: &mut Builder<'_>, name: &str, d_in: usize, d_out: usize, out_init: Init) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(bld, &format!("{name}.fc1"), d_in, 2 * d_in, Init::Scaled)?,
            fc2: Linear::new(bld, &format!("{name}.fc2"), 2 * d_in, d_out, out_init)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        self.fc2.forward(p, self.fc1.forward(p, x)?.silu())
    }
}

/// Pre-norm self-attention + MLP over the frame axis of `[frames, tokens, d]`.
///
/// Output projections start at zero, so a fresh block is the identity.
#[derive(Clone, Debug)]
pub struct TemporalBlock {
    pub norm1: Norm,
    pub attn: Attention,
    pub norm2: Norm,
    pub mlp: Mlp,
}

impl TemporalBlock {
    pub fn new(bld: &mut Builder<'_>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(bld, &format!("{name}.norm1"), dim)?,
            attn: Attention::new(bld, &format!("{name}.attn"), dim, Init::Zero)?.with_heads(heads)?,
            norm2: Norm::new(bld, &format!("{name}.norm2"), dim)?,
            mlp: Mlp::new(bld, &format!("{name}.mlp"), dim, dim, Init::Zero)?,
        })
    }

    pub fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let shape = x.shape();
        let (frames, tokens, dim) = (shape[0], shape[1], shape[2]);
        let y = x.permute(&[1, 0, 2])?;
        let pos = x.tape().constant(frame_positions(tokens, frames, dim));
        let h = self.norm1.forward(p, y)?.add(pos)?;
        let y = y.add(self.attn.forward(p, h, h)?)?;
        let y = y.add(self.mlp.forward(p, self.norm2.forward(p, y)?)?)?;
        y.permute(&[1, 0, 2])
    }
}

/// Standard sinusoidal embedding of a scalar position, `[dim]`.
pub fn sinusoid(pos: f64, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half.max(1) as f64);
        out[i] = (pos * freq).sin() as f32;
        out[half + i] = (pos * freq).cos() as f32;
    }
    out
}

/// `[rows, frames, dim]`: frame index embedding repeated over `rows`.
pub fn frame_positions(rows: usize, frames: usize, dim: usize) -> Tensor {
    let table: Vec<f32> = (0..frames).flat_map(|f| sinusoid(f as f64, dim)).collect();
    let data = table.iter().copied().cycle().take(rows * table.len()).collect();
    Tensor::new(&[rows, frames, dim], data).expect("sized above")
}

/// `[frames, h·w, dim]`: half the channels embed the row, half the column.
pub fn grid_positions(frames: usize, h: usize, w: usize, dim: usize) -> Tensor {
    let half = dim / 2;
    let mut table = Vec::with_capacity(h * w * dim);
    for y in 0..h {
        for x in 0..w {
            table.extend(sinusoid(y as f64, half));
            table.extend(sinusoid(x as f64, dim - half));
        }
    }
    let data = table.iter().copied().cycle().take(frames * table.len()).collect();
    Tensor::new(&[frames, h * w, dim], data).expect("sized above")
}

/// Repeats a `[n, d]` var `copies` times along a new leading axis.
pub fn repeat_leading<'t>(x: Var<'t>, copies: usize) -> Result<Var<'t>> {
    let mut shape = vec![1];
    shape.extend(x.shape());
    x.reshape(&shape)?.select_axis0(&vec![0; copies])
}
