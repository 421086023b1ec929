//! Video projector: turns `n_c` conditioning frames into `n_g` per-frame
//! token sets.
//!
//! Each conditioning frame passes the IP sampler on its own (learned
//! queries cross-attending to that frame's patch tokens). The last frame's
//! features are repeated to pad the sequence to `n_g` slots, a temporal
//! transformer mixes along the frame axis, and a double MLP maps the result
//! to the denoiser's context space.

use super::layers::{grid_positions, repeat_leading, Attention, Builder, Init, Linear, Mlp, Norm, TemporalBlock};
use super::params::{Bound, ParamGroup, ParamId};
use crate::error::{ensure, Result};
use crate::numcore::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct VideoProjector {
    pub in_proj: Linear,
    pub queries: ParamId,
    pub norm_q: Norm,
    pub norm_kv: Norm,
    pub ip_attn: Attention,
    pub ip_norm: Norm,
    pub ip_mlp: Mlp,
    /// Parameter group θ.
    pub temporal: Vec<TemporalBlock>,
    pub out_mlp: Mlp,
    pub latent_channels: usize,
    pub grid: (usize, usize),
    pub dim: usize,
    pub ip_tokens: usize,
}

/// Intermediate values of one projection, exposed for inspection.
pub struct Projection<'t> {
    /// Padded IP-sampler features `[n_g, K, d]` before temporal mixing.
    pub pre_temporal: Var<'t>,
    /// Final tokens `[n_g, K, d]`.
    pub output: Var<'t>,
}

impl VideoProjector {
    pub fn new(
        bld: &mut Builder<'_>,
        latent_channels: usize,
        grid: (usize, usize),
        dim: usize,
        ip_tokens: usize,
        temporal_blocks: usize,
    ) -> Result<Self> {
        let in_proj = Linear::new(bld, "proj.in", latent_channels, dim, Init::Scaled)?;
        let queries = bld.normal("proj.ip.queries", &[ip_tokens, dim], 1.0)?;
        let norm_q = Norm::new(bld, "proj.ip.norm_q", dim)?;
        let norm_kv = Norm::new(bld, "proj.ip.norm_kv", dim)?;
        let ip_attn = Attention::new(bld, "proj.ip.attn", dim, Init::Scaled)?;
        let ip_norm = Norm::new(bld, "proj.ip.norm_mlp", dim)?;
        let ip_mlp = Mlp::new(bld, "proj.ip.mlp", dim, dim, Init::Scaled)?;
        let temporal = {
            let mut tb = bld.with_group(ParamGroup::Theta);
            (0..temporal_blocks)
                .map(|i| TemporalBlock::new(&mut tb, &format!("proj.temporal{i}"), dim, 1))
                .collect::<Result<Vec<_>>>()?
        };
        let out_mlp = Mlp::new(bld, "proj.out", dim, dim, Init::Scaled)?;
        Ok(Self {
            in_proj,
            queries,
            norm_q,
            norm_kv,
            ip_attn,
            ip_norm,
            ip_mlp,
            temporal,
            out_mlp,
            latent_channels,
            grid,
            dim,
            ip_tokens,
        })
    }

    /// Per-frame IP-sampler features `[n, K, d]` for latent frames `[n, Cz, h, w]`.
    pub fn ip_features<'t>(&self, p: &Bound<'t>, frames: Var<'t>) -> Result<Var<'t>> {
        let n = frames.shape()[0];
        let (h, w) = self.grid;
        let tape = frames.tape();
        let tokens = frames.permute(&[0, 2, 3, 1])?.reshape(&[n, h * w, self.latent_channels])?;
        let x = self.in_proj.forward(p, tokens)?.add(tape.constant(grid_positions(n, h, w, self.dim)))?;
        let kv = self.norm_kv.forward(p, x)?;
        let q = repeat_leading(p.get(self.queries), n)?;
        let feats = q.add(self.ip_attn.forward(p, self.norm_q.forward(p, q)?, kv)?)?;
        feats.add(self.ip_mlp.forward(p, self.ip_norm.forward(p, feats)?)?)
    }

    /// Full projection of `frames` to `n_g` slots. `temporal = false`
    /// skips the temporal transformer.
    pub fn forward<'t>(&self, p: &Bound<'t>, frames: Var<'t>, n_g: usize, temporal: bool) -> Result<Projection<'t>> {
        let shape = frames.shape();
        ensure!(shape.len() == 4 && shape[1] == self.latent_channels && (shape[2], shape[3]) == self.grid,
            InvalidShape, "projector expects [n, {}, {}, {}], got {:?}",
            self.latent_channels, self.grid.0, self.grid.1, shape);
        let n_c = shape[0];
        ensure!(n_c >= 1, Conditioning, "projector needs at least one conditioning frame");
        ensure!(n_c <= n_g, Conditioning, "n_c = {} exceeds n_g = {}", n_c, n_g);
        let feats = self.ip_features(p, frames)?;
        let pre_temporal = if n_c == n_g {
            feats
        } else {
            let idx: Vec<usize> = (0..n_g).map(|i| i.min(n_c - 1)).collect();
            feats.select_axis0(&idx)?
        };
        let mut x = pre_temporal;
        if temporal {
            // Mix over the frame axis: [n_g, K, d] → blocks treat axis 0 as frames.
            for block in &self.temporal {
                x = block.forward(p, x)?;
            }
        }
        let output = self.out_mlp.forward(p, x)?;
        Ok(Projection { pre_temporal, output })
    }

    pub fn forward_tensor<'t>(&self, p: &Bound<'t>, frames: &Tensor, n_g: usize, temporal: bool) -> Result<Projection<'t>> {
        self.forward(p, p.tape().constant(frames.clone()), n_g, temporal)
    }
}
