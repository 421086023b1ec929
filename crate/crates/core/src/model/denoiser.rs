//! Toy 3D denoiser: per-frame spatial transformer blocks that cross-attend
//! to their conditioning slot plus the caption, interleaved with temporal
//! blocks over the frame axis. Single resolution, multi-head attention.

use super::layers::{grid_positions, repeat_leading, sinusoid, Attention, Builder, Init, Linear, Mlp, Norm, TemporalBlock};
use super::params::{Bound, ParamGroup};
use crate::error::{ensure, Result};
use crate::numcore::{Tensor, Var};

#[derive(Clone, Debug)]
pub struct SpatialBlock {
    pub norm1: Norm,
    pub self_attn: Attention,
    pub norm2: Norm,
    pub norm_ctx: Norm,
    pub cross_attn: Attention,
    pub norm3: Norm,
    pub mlp: Mlp,
}

impl SpatialBlock {
    fn new(bld: &mut Builder<'_>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            norm1: Norm::new(bld, &format!("{name}.norm1"), dim)?,
            self_attn: Attention::new(bld, &format!("{name}.self_attn"), dim, Init::Scaled)?.with_heads(heads)?,
            norm2: Norm::new(bld, &format!("{name}.norm2"), dim)?,
            norm_ctx: Norm::new(bld, &format!("{name}.norm_ctx"), dim)?,
            cross_attn: Attention::new(bld, &format!("{name}.cross_attn"), dim, Init::Scaled)?.with_heads(heads)?,
            norm3: Norm::new(bld, &format!("{name}.norm3"), dim)?,
            mlp: Mlp::new(bld, &format!("{name}.mlp"), dim, dim, Init::Scaled)?,
        })
    }

    /// `x: [F, S, d]`, `ctx: [F, C, d]`; frame `i` sees only `ctx[i]`.
    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>, ctx: Var<'t>) -> Result<Var<'t>> {
        let h = self.norm1.forward(p, x)?;
        let x = x.add(self.self_attn.forward(p, h, h)?)?;
        let c = self.norm_ctx.forward(p, ctx)?;
        let x = x.add(self.cross_attn.forward(p, self.norm2.forward(p, x)?, c)?)?;
        x.add(self.mlp.forward(p, self.norm3.forward(p, x)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct Denoiser {
    pub in_proj: Linear,
    pub time_fc1: Linear,
    pub time_fc2: Linear,
    pub spatial: Vec<SpatialBlock>,
    /// Parameter group φ; block `i` follows spatial block `i`.
    pub temporal: Vec<TemporalBlock>,
    pub out_norm: Norm,
    pub out_proj: Linear,
    pub latent_channels: usize,
    pub grid: (usize, usize),
    pub dim: usize,
}

impl Denoiser {
    pub fn new(
        bld: &mut Builder<'_>,
        latent_channels: usize,
        grid: (usize, usize),
        dim: usize,
        spatial_blocks: usize,
        temporal_blocks: usize,
        heads: usize,
    ) -> Result<Self> {
        let in_proj = Linear::new(bld, "den.in", latent_channels, dim, Init::Scaled)?;
        let time_fc1 = Linear::new(bld, "den.time.fc1", dim, dim, Init::Scaled)?;
        let time_fc2 = Linear::new(bld, "den.time.fc2", dim, dim, Init::Scaled)?;
        let spatial = (0..spatial_blocks)
            .map(|i| SpatialBlock::new(bld, &format!("den.spatial{i}"), dim, heads))
            .collect::<Result<Vec<_>>>()?;
        let temporal = {
            let mut tb = bld.with_group(ParamGroup::Phi);
            (0..temporal_blocks)
                .map(|i| TemporalBlock::new(&mut tb, &format!("den.temporal{i}"), dim, heads))
                .collect::<Result<Vec<_>>>()?
        };
        let out_norm = Norm::new(bld, "den.out_norm", dim)?;
        let out_proj = Linear::new(bld, "den.out", dim, latent_channels, Init::Scaled)?;
        Ok(Self { in_proj, time_fc1, time_fc2, spatial, temporal, out_norm, out_proj, latent_channels, grid, dim })
    }

    /// ε-prediction for `z_t: [F, Cz, h, w]` given per-frame condition
    /// tokens `[F, K, d]` and caption tokens `[L, d]`.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t>,
        z_t: &Tensor,
        t: usize,
        cond: Var<'t>,
        text: Var<'t>,
        temporal: bool,
    ) -> Result<Var<'t>> {
        let (h, w) = self.grid;
        ensure!(z_t.rank() == 4 && z_t.shape()[1] == self.latent_channels && (z_t.shape()[2], z_t.shape()[3]) == self.grid,
            InvalidShape, "denoiser expects [F, {}, {}, {}], got {:?}", self.latent_channels, h, w, z_t.shape());
        let frames = z_t.shape()[0];
        let cshape = cond.shape();
        ensure!(cshape.len() == 3 && cshape[0] == frames, Conditioning,
            "condition has {:?} slots for {} frames", cshape.first(), frames);
        let tape = p.tape();

        let tokens = z_t.permute(&[0, 2, 3, 1])?.into_reshape(&[frames, h * w, self.latent_channels])?;
        let mut x = self.in_proj.forward(p, tape.constant(tokens))?;
        x = x.add(tape.constant(grid_positions(frames, h, w, self.dim)))?;

        let temb = tape.constant(Tensor::new(&[1, self.dim], sinusoid(t as f64, self.dim))?);
        let temb = self.time_fc2.forward(p, self.time_fc1.forward(p, temb)?.silu())?.reshape(&[self.dim])?;

        let ctx = Var::concat(&[cond, repeat_leading(text, frames)?], 1)?;
        for (i, block) in self.spatial.iter().enumerate() {
            x = block.forward(p, x.add_bias(temb)?, ctx)?;
            if temporal {
                if let Some(tb) = self.temporal.get(i) {
                    x = tb.forward(p, x)?;
                }
            }
        }
        let out = self.out_proj.forward(p, self.out_norm.forward(p, x)?)?;
        out.reshape(&[frames, h, w, self.latent_channels])?.permute(&[0, 3, 1, 2])
    }
}
