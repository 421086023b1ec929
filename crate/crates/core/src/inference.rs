//! Guided DDIM sampling, one round at a time or recursively for long videos.
//!
//! A multi-round run conditions every later round on the previous round's
//! last `n_o` frames (decoded to pixels and re-encoded) and carries the
//! caption forward unchanged. The regenerated overlap frames at the start
//! of each later round are dropped when stitching, so the output holds
//! `f + (m−1)·(f − n_o)` frames.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::guidance::{cfg_combine, resample, EpsModel, GuidanceConfig, GuidanceParts};
use crate::model::{ConditionBundle, LatentCodec, PreparedCond, VideoModel};
use crate::numcore::{Rng, Tensor};
use crate::schedule::{ddim_pairs, ddim_step, ddim_timesteps, predict_x0, q_sample, NoiseSchedule, DEFAULT_SAMPLING_STEPS};

/// Where the std-resampling correction is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleMode {
    /// To the guided ε at every DDIM step.
    PerStep,
    /// Once, to the final latent, against the conditional prediction's
    /// clean-latent estimate at the last step.
    FinalLatent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f32,
    pub resample_scale: f32,
    pub resample_mode: ResampleMode,
    /// Rounds `m`.
    pub rounds: usize,
    /// Frames per round `f`.
    pub frames_per_round: usize,
    /// Inter-round overlap `n_o`; `0` makes later rounds caption-only.
    pub overlap: usize,
    pub init_overlap_noise: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_SAMPLING_STEPS,
            cfg_scale: crate::guidance::DEFAULT_CFG_SCALE,
            resample_scale: crate::guidance::DEFAULT_RESAMPLE_SCALE,
            resample_mode: ResampleMode::PerStep,
            rounds: 1,
            frames_per_round: 8,
            overlap: 4,
            init_overlap_noise: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.steps >= 1, Config, "steps must be >= 1");
        ensure!(self.rounds >= 1, Config, "rounds must be >= 1");
        ensure!(self.frames_per_round >= 1, Config, "frames per round must be >= 1");
        ensure!(self.overlap < self.frames_per_round, Config,
            "overlap {} must be below frames per round {}", self.overlap, self.frames_per_round);
        self.guidance().validate()
    }

    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig { cfg_scale: self.cfg_scale, resample_scale: self.resample_scale }
    }

    /// `f + (m−1)·(f − n_o)`.
    pub fn total_frames(&self) -> usize {
        self.frames_per_round + (self.rounds - 1) * (self.frames_per_round - self.overlap)
    }

    /// `m·f`, ignoring overlap.
    pub fn naive_frames(&self) -> usize {
        self.rounds * self.frames_per_round
    }
}

/// What the samplers need from a denoiser besides ε-prediction.
pub trait VideoDenoiser: EpsModel {
    fn schedule(&self) -> &NoiseSchedule;
    fn codec(&self) -> &LatentCodec;
    fn latent_shape(&self, frames: usize) -> Result<[usize; 4]>;
    fn prepare(&self, cond: &ConditionBundle, frames: usize) -> Result<Self::Cond>;
}

impl VideoDenoiser for VideoModel {
    fn schedule(&self) -> &NoiseSchedule {
        VideoModel::schedule(self)
    }

    fn codec(&self) -> &LatentCodec {
        VideoModel::codec(self)
    }

    fn latent_shape(&self, frames: usize) -> Result<[usize; 4]> {
        VideoModel::latent_shape(self, frames)
    }

    fn prepare(&self, cond: &ConditionBundle, frames: usize) -> Result<PreparedCond> {
        VideoModel::prepare(self, cond, frames)
    }
}

/// Initial latent: pure noise, optionally with the condition frames noised
/// to the top of the ladder in the leading slots.
pub fn initial_latent<M: VideoDenoiser>(
    model: &M,
    cond: &ConditionBundle,
    cfg: &SamplerConfig,
    t_start: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let shape = model.latent_shape(cfg.frames_per_round)?;
    let z = rng.randn(&shape)?;
    match (&cond.frames, cfg.init_overlap_noise) {
        (Some(frames), true) => {
            let n_c = frames.shape()[0];
            let noise = rng.randn(frames.shape())?;
            let noised = q_sample(frames, t_start, &noise, model.schedule())?;
            Tensor::concat_axis0(&[&noised, &z.slice_axis0(n_c, cfg.frames_per_round)?])
        }
        _ => Ok(z),
    }
}

/// One guided DDIM run producing `f` latent frames.
pub fn single_round<M: VideoDenoiser>(
    model: &M,
    cond: &ConditionBundle,
    cfg: &SamplerConfig,
    rng: &mut Rng,
) -> Result<Tensor> {
    cfg.validate()?;
    cond.validate()?;
    ensure!(cond.n_c <= cfg.frames_per_round, Conditioning,
        "{} condition frames exceed {} frames per round", cond.n_c, cfg.frames_per_round);
    let schedule = model.schedule();
    let ladder = ddim_timesteps(schedule.len(), cfg.steps)?;
    let mut z = initial_latent(model, cond, cfg, ladder[0], rng)?;
    let pos = model.prepare(cond, cfg.frames_per_round)?;
    let neg = model.prepare(&ConditionBundle::null(), cfg.frames_per_round)?;
    let g = cfg.guidance();
    let mut last_x0_std = None;
    for (t, t_prev) in ddim_pairs(&ladder) {
        let parts = GuidanceParts::evaluate(model, &z, t, &pos, &neg)?;
        let eps = match cfg.resample_mode {
            ResampleMode::PerStep => parts.combine(&g)?,
            ResampleMode::FinalLatent => {
                if t_prev.is_none() {
                    last_x0_std = Some(predict_x0(&z, &parts.pos, t, schedule)?.std());
                }
                cfg_combine(&parts.pos, &parts.neg, g.cfg_scale)?
            }
        };
        z = ddim_step(&z, &eps, t, t_prev, schedule)?;
    }
    if let Some(sigma) = last_x0_std {
        z = resample(&z, sigma, g.resample_scale)?;
    }
    Ok(z)
}

#[derive(Clone, Debug)]
pub struct MultiRoundOutput {
    /// Stitched latent video `[total_frames, Cz, h, w]`.
    pub latent: Tensor,
    /// Each round's full `f`-frame latent.
    pub rounds: Vec<Tensor>,
}

/// Recursive long-video sampling.
pub fn multi_round<M: VideoDenoiser>(model: &M, init: &ConditionBundle, cfg: &SamplerConfig) -> Result<MultiRoundOutput> {
    cfg.validate()?;
    let root = Rng::new(cfg.seed);
    let text = init.text.clone();
    let mut cond = init.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut kept: Vec<Tensor> = Vec::with_capacity(cfg.rounds);
    for k in 0..cfg.rounds {
        let z = single_round(model, &cond, cfg, &mut root.derive(&format!("round/{k}")))?;
        let skip = if k == 0 { 0 } else { cfg.overlap };
        kept.push(z.slice_axis0(skip, cfg.frames_per_round)?);
        cond = if cfg.overlap > 0 {
            let f = cfg.frames_per_round;
            let pixels = model.codec().decode(&z.slice_axis0(f - cfg.overlap, f)?)?;
            ConditionBundle::new(model.codec().encode(&pixels)?, text.clone().unwrap_or_default())?
        } else {
            match &text {
                Some(t) => ConditionBundle::text_only(t.clone()),
                None => ConditionBundle::null(),
            }
        };
        rounds.push(z);
    }
    let parts: Vec<&Tensor> = kept.iter().collect();
    let latent = Tensor::concat_axis0(&parts)?;
    debug_assert_eq!(latent.shape()[0], cfg.total_frames());
    Ok(MultiRoundOutput { latent, rounds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftRow {
    pub round: usize,
    pub r: f32,
    pub latent_std: f64,
    pub mean_intensity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftSummary {
    pub r: f32,
    /// `max_k |std_k − std_1|`.
    pub max_std_deviation: f64,
    /// `|intensity_m − intensity_1|`.
    pub final_intensity_deviation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    pub summary: Vec<DriftSummary>,
}

impl DriftReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,r,latent_std,mean_intensity\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", row.round, row.r, row.latent_std, row.mean_intensity));
        }
        out
    }
}

/// Multi-round runs at each resampling scale with identical seeds; records
/// per-round latent std and decoded mean intensity.
pub fn drift_probe<M: VideoDenoiser>(
    model: &M,
    init: &ConditionBundle,
    cfg: &SamplerConfig,
    r_values: &[f32],
) -> Result<DriftReport> {
    ensure!(!r_values.is_empty(), Config, "drift probe needs at least one r");
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &r in r_values {
        let run = SamplerConfig { resample_scale: r, ..cfg.clone() };
        let out = multi_round(model, init, &run)?;
        let mut stats = Vec::with_capacity(out.rounds.len());
        for (k, z) in out.rounds.iter().enumerate() {
            let row = DriftRow {
                round: k + 1,
                r,
                latent_std: z.std(),
                mean_intensity: model.codec().decode(z)?.mean(),
            };
            stats.push((row.latent_std, row.mean_intensity));
            rows.push(row);
        }
        let (s1, i1) = stats[0];
        summary.push(DriftSummary {
            r,
            max_std_deviation: stats.iter().map(|(s, _)| (s - s1).abs()).fold(0.0, f64::max),
            final_intensity_deviation: (stats.last().expect("rounds >= 1").1 - i1).abs(),
        });
    }
    Ok(DriftReport { rows, summary })
}

/// Cheap stand-in denoiser (`ε = c·z_t`) for exercising the orchestration
/// without a network.
#[derive(Clone, Debug)]
pub struct StubDenoiser {
    pub schedule: NoiseSchedule,
    pub codec: LatentCodec,
    pub frame_size: usize,
    pub gain: f32,
}

impl StubDenoiser {
    pub fn new(frame_size: usize) -> Result<Self> {
        Ok(Self {
            schedule: NoiseSchedule::default(),
            codec: LatentCodec::new(crate::model::CodecConfig::orthogonal(3, 2, 0))?,
            frame_size,
            gain: 0.5,
        })
    }
}

impl EpsModel for StubDenoiser {
    type Cond = usize;

    fn predict_eps(&self, z_t: &Tensor, _t: usize, frames: &usize) -> Result<Tensor> {
        ensure!(z_t.shape()[0] == *frames, Conditioning, "condition prepared for {} frames", frames);
        Ok(z_t.scale(self.gain))
    }
}

impl VideoDenoiser for StubDenoiser {
    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    fn codec(&self) -> &LatentCodec {
        &self.codec
    }

    fn latent_shape(&self, frames: usize) -> Result<[usize; 4]> {
        self.codec.latent_shape(frames, self.frame_size, self.frame_size)
    }

    fn prepare(&self, cond: &ConditionBundle, frames: usize) -> Result<usize> {
        ensure!(cond.n_c <= frames, Conditioning, "{} condition frames for {} slots", cond.n_c, frames);
        Ok(frames)
    }
}
