//! The neural side: latent codec, caption encoder, video projector and
//! denoiser, plus the parameter store that ties them together.

mod checkpoint;
mod codec;
mod condition;
mod denoiser;
pub mod layers;
mod params;
mod projector;
mod text;

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, CheckpointEntry, CheckpointManifest};
pub use codec::{CodecConfig, LatentCodec};
pub use condition::ConditionBundle;
pub use denoiser::{Denoiser, SpatialBlock};
pub use params::{Bound, Param, ParamGroup, ParamId, ParamPartition, ParamStore};
pub use projector::{Projection, VideoProjector};
pub use text::TextEncoder;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::guidance::EpsModel;
use crate::numcore::{Rng, Tape, Tensor, Var};
use crate::schedule::{make_linear_schedule, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TRAIN_STEPS};
use layers::{repeat_leading, Builder};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub zero_terminal_snr: bool,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            train_steps: DEFAULT_TRAIN_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            zero_terminal_snr: false,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let s = make_linear_schedule(self.train_steps, self.beta_start, self.beta_end)?;
        if self.zero_terminal_snr {
            s.rescale_zero_terminal_snr()
        } else {
            Ok(s)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frame_size: usize,
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub ip_tokens: usize,
    /// Attention heads in the denoiser's spatial and temporal blocks.
    pub heads: usize,
    pub spatial_blocks: usize,
    pub temporal_blocks: usize,
    pub projector_temporal_blocks: usize,
    pub vocab: usize,
    pub seed: u64,
    /// Pixel offset removed before encoding.
    pub latent_shift: f32,
    /// Latent gain; with the shift this brings synthetic clips to about unit std.
    pub latent_scale: f32,
    /// `false` bypasses the denoiser's temporal blocks everywhere.
    pub denoiser_temporal: bool,
    pub schedule: ScheduleConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            frame_size: crate::synthdata::FRAME_SIZE,
            channels: crate::synthdata::CHANNELS,
            patch: 4,
            dim: 64,
            ip_tokens: 4,
            heads: 4,
            spatial_blocks: 2,
            temporal_blocks: 2,
            projector_temporal_blocks: 1,
            vocab: crate::synthdata::VOCAB_SIZE,
            seed: 0,
            latent_shift: 0.3,
            latent_scale: 6.0,
            denoiser_temporal: true,
            schedule: ScheduleConfig::default(),
        }
    }
}

/// Projected condition ready for repeated denoiser calls.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedCond {
    /// `[F, K, d]`.
    pub tokens: Tensor,
    /// `[L, d]`.
    pub text: Tensor,
}

#[derive(Clone, Debug)]
pub struct VideoModel {
    config: ModelConfig,
    codec: LatentCodec,
    schedule: NoiseSchedule,
    store: ParamStore,
    pub text: TextEncoder,
    pub projector: VideoProjector,
    pub denoiser: Denoiser,
    pub null_cond: ParamId,
}

impl VideoModel {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self> {
        ensure!(config.dim >= 2 && config.dim % 2 == 0, Config, "dim must be even, got {}", config.dim);
        ensure!(config.ip_tokens >= 1, Config, "need at least one IP token");
        ensure!(config.temporal_blocks <= config.spatial_blocks, Config,
            "temporal blocks ({}) exceed spatial blocks ({})", config.temporal_blocks, config.spatial_blocks);
        let codec = LatentCodec::new(CodecConfig {
            shift: config.latent_shift,
            scale: config.latent_scale,
            ..CodecConfig::orthogonal(config.channels, config.patch, config.seed)
        })?;
        let [_, cz, h, w] = codec.latent_shape(1, config.frame_size, config.frame_size)?;
        let schedule = config.schedule.build()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::new(config.seed).derive("init");
        let mut bld = Builder { store: &mut store, rng: &mut rng, group: ParamGroup::Frozen };
        let text = TextEncoder::new(&mut bld, config.vocab, config.dim)?;
        let null_cond = bld.normal("null_cond", &[config.ip_tokens, config.dim], 1.0)?;
        let projector = VideoProjector::new(&mut bld, cz, (h, w), config.dim, config.ip_tokens, config.projector_temporal_blocks)?;
        let denoiser = Denoiser::new(&mut bld, cz, (h, w), config.dim, config.spatial_blocks, config.temporal_blocks, config.heads)?;
        Ok(Self { config, codec, schedule, store, text, projector, denoiser, null_cond })
    }

    /// Switches the denoiser's temporal blocks on or off for every later
    /// forward pass; parameters are kept either way.
    pub fn with_denoiser_temporal(mut self, on: bool) -> Self {
        self.config.denoiser_temporal = on;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn codec(&self) -> &LatentCodec {
        &self.codec
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn partition(&self) -> ParamPartition {
        self.store.partition()
    }

    pub fn latent_shape(&self, frames: usize) -> Result<[usize; 4]> {
        self.codec.latent_shape(frames, self.config.frame_size, self.config.frame_size)
    }

    /// Condition tokens `[n_g, K, d]` and caption tokens `[L, d]`.
    ///
    /// `temporal = false` skips the projector's temporal transformer.
    pub fn condition<'t>(&self, p: &Bound<'t>, bundle: &ConditionBundle, n_g: usize, temporal: bool) -> Result<(Var<'t>, Var<'t>)> {
        bundle.validate()?;
        let tokens = match &bundle.frames {
            Some(frames) => self.projector.forward_tensor(p, frames, n_g, temporal)?.output,
            None => repeat_leading(p.get(self.null_cond), n_g)?,
        };
        let text = match &bundle.text {
            Some(ids) => self.text.forward(p, ids)?,
            None => self.text.null(p),
        };
        Ok((tokens, text))
    }

    /// ε-prediction on the tape, with the network output blended against a
    /// skip connection from `z_t`. `temporal = false` also bypasses the
    /// denoiser's temporal blocks (they are bypassed regardless when
    /// `config.denoiser_temporal` is off).
    pub fn eps<'t>(&self, p: &Bound<'t>, z_t: &Tensor, t: usize, cond: Var<'t>, text: Var<'t>, temporal: bool) -> Result<Var<'t>> {
        ensure!(t < self.schedule.len(), OutOfRange, "timestep {} outside [0, {})", t, self.schedule.len());
        let net = self.denoiser.forward(p, z_t, t, cond, text, temporal && self.config.denoiser_temporal)?;
        // ε̂ = √(1−ᾱ)·z + √ᾱ·net: the skip term is the best linear guess
        // for unit-variance latents, so the network only models the residual
        // and its errors are not amplified where ᾱ → 0.
        let ab = self.schedule.alpha_bar(t)?;
        let skip = p.tape().constant(z_t.scale((1.0 - ab).sqrt() as f32));
        net.scale(ab.sqrt() as f32).add(skip)
    }

    pub fn prepare(&self, bundle: &ConditionBundle, n_g: usize) -> Result<PreparedCond> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let (tokens, text) = self.condition(&p, bundle, n_g, true)?;
        let out = PreparedCond { tokens: tokens.value().clone(), text: text.value().clone() };
        Ok(out)
    }
}

impl EpsModel for VideoModel {
    type Cond = PreparedCond;

    fn predict_eps(&self, z_t: &Tensor, t: usize, cond: &PreparedCond) -> Result<Tensor> {
        let tape = Tape::new();
        let p = self.store.bind_frozen(&tape);
        let eps = self.eps(&p, z_t, t, tape.constant(cond.tokens.clone()), tape.constant(cond.text.clone()), true)?;
        let out = eps.value().clone();
        Ok(out)
    }
}
