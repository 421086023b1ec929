//! `sample` and `drift-probe`.

use std::path::PathBuf;

use clap::Args;
use longvid_core::eval::{consistency_score, write_frames, FeatureExtractor, FEATURE_SEED};
use longvid_core::guidance::{DEFAULT_CFG_SCALE, DEFAULT_RESAMPLE_SCALE};
use longvid_core::inference::{drift_probe, multi_round, ResampleMode, SamplerConfig};
use longvid_core::model::{checkpoint_hash, load_checkpoint, ConditionBundle, VideoModel};
use longvid_core::numcore::{fft1, Rng};
use longvid_core::synthdata::{caption_text, make_indexed_clip, Clip, DEFAULT_CLIP_LEN};
use serde_json::{json, Value};

use super::data::load_dataset;
use super::{emit, parse_list, prepare_out_dir, require, DEFAULT_SEED};
use crate::config::Settings;
use crate::manifest::RunManifest;
use crate::{CliError, Common};

/// First eval-split clip of the default 500-clip dataset.
pub const DEFAULT_PROMPT_CLIP: usize = 450;
pub const DEFAULT_COND_FRAMES: usize = 2;
pub const DEFAULT_DRIFT_ROUNDS: usize = 8;

#[derive(Args, Debug)]
pub struct SamplerArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Rounds `m`.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Frames generated per round `f`.
    #[arg(long)]
    pub frames_per_round: Option<usize>,
    /// Frames carried into the next round as its condition.
    #[arg(long)]
    pub overlap: Option<usize>,
    /// DDIM steps per round.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cfg_scale: Option<f32>,
    #[arg(long)]
    pub resample_scale: Option<f32>,
    /// Resample the guided ε at every step (`true`) or only the final latent.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub resample_per_step: Option<bool>,
    /// Start the condition frames' slots from their noised latents.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub init_overlap_noise: Option<bool>,
    /// `gen-data` directory to take the prompt clip from.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Clip index supplying the caption and the first condition frames.
    #[arg(long)]
    pub prompt_clip: Option<usize>,
    /// Seed of the synthetic dataset the prompt clip is drawn from when `--data` is absent.
    #[arg(long)]
    pub prompt_seed: Option<u64>,
    /// Leading clip frames used as the first round's condition; 0 = caption only.
    #[arg(long)]
    pub cond_frames: Option<usize>,
}

struct Resolved {
    checkpoint: PathBuf,
    sampler: SamplerConfig,
    clip: Clip,
    prompt: Value,
    cond_frames: usize,
}

fn resolve(a: SamplerArgs, s: &Settings, seed: u64, default_rounds: usize) -> Result<Resolved, CliError> {
    let d = SamplerConfig::default();
    let per_step = s.pick(a.resample_per_step, "resample_per_step", true)?;
    let sampler = SamplerConfig {
        steps: s.pick(a.steps, "steps", d.steps)?,
        cfg_scale: s.pick(a.cfg_scale, "cfg_scale", DEFAULT_CFG_SCALE)?,
        resample_scale: s.pick(a.resample_scale, "resample_scale", DEFAULT_RESAMPLE_SCALE)?,
        resample_mode: if per_step { ResampleMode::PerStep } else { ResampleMode::FinalLatent },
        rounds: s.pick(a.rounds, "rounds", default_rounds)?,
        frames_per_round: s.pick(a.frames_per_round, "frames_per_round", d.frames_per_round)?,
        overlap: s.pick(a.overlap, "overlap", d.overlap)?,
        init_overlap_noise: s.pick(a.init_overlap_noise, "init_overlap_noise", d.init_overlap_noise)?,
        seed,
    };
    sampler.validate()?;
    let checkpoint = require(s.pick_opt(a.checkpoint, "checkpoint")?, "checkpoint")?;
    let data = s.pick_opt(a.data, "data")?;
    let index = s.pick(a.prompt_clip, "prompt_clip", DEFAULT_PROMPT_CLIP)?;
    let prompt_seed = s.pick(a.prompt_seed, "prompt_seed", DEFAULT_SEED)?;
    let cond_frames = s.pick(a.cond_frames, "cond_frames", DEFAULT_COND_FRAMES)?;
    let clip = match &data {
        Some(dir) => {
            let ds = load_dataset(dir)?;
            let n = ds.clips.len();
            ds.clips.into_iter().nth(index)
                .ok_or_else(|| CliError::Usage(format!("prompt clip {index} out of range ({n} clips)")))?
        }
        None => make_indexed_clip(&Rng::new(prompt_seed).derive("data"), index, DEFAULT_CLIP_LEN)?,
    };
    if cond_frames > clip.video.shape()[0] || cond_frames > sampler.frames_per_round {
        return Err(CliError::Usage(format!(
            "cond-frames {cond_frames} exceeds the clip length or frames-per-round")));
    }
    let prompt = json!({
        "data": data.as_ref().map(|p| p.display().to_string()),
        "prompt_clip": index,
        "prompt_seed": if data.is_none() { Some(prompt_seed) } else { None },
        "cond_frames": cond_frames,
        "caption": caption_text(&clip.caption)?,
    });
    Ok(Resolved { checkpoint, sampler, clip, prompt, cond_frames })
}

fn init_bundle(model: &VideoModel, clip: &Clip, cond_frames: usize) -> Result<ConditionBundle, CliError> {
    Ok(if cond_frames == 0 {
        ConditionBundle::text_only(clip.caption.clone())
    } else {
        let frames = model.codec().encode(&clip.video.slice_axis0(0, cond_frames)?)?;
        ConditionBundle::new(frames, clip.caption.clone())?
    })
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

pub fn run(a: SampleArgs) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let seed = s.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let out = require(s.pick_opt(a.out_dir, "out_dir")?, "out-dir")?;
    let r = resolve(a.sampler, &s, seed, 1)?;
    s.finish()?;

    let model = load_checkpoint(&r.checkpoint)?;
    let hash = checkpoint_hash(&r.checkpoint)?;
    let init = init_bundle(&model, &r.clip, r.cond_frames)?;
    let run = multi_round(&model, &init, &r.sampler)?;
    let video = model.codec().decode(&run.latent)?.map(|v| v.clamp(0.0, 1.0));

    let out = prepare_out_dir(&out)?;
    fft1::save(out.join("latent.fft1"), &run.latent)?;
    let frames = write_frames(&out.join("frames"), &video)?;
    let fx = FeatureExtractor::new(FEATURE_SEED, video.shape()[1]);
    let mut manifest = RunManifest::new("sample", seed, json!({
        "checkpoint": r.checkpoint.display().to_string(),
        "sampler": r.sampler,
        "prompt": r.prompt,
    }));
    manifest.checkpoint_hash = Some(hash);
    manifest.artifacts.push("latent.fft1".into());
    manifest.artifacts.extend(frames.iter().map(|p| format!("frames/{}", p.file_name().unwrap_or_default().to_string_lossy())));
    manifest.results = json!({
        "total_frames": r.sampler.total_frames(),
        "naive_frames": r.sampler.naive_frames(),
        "latent_shape": run.latent.shape(),
        "round_latent_std": run.rounds.iter().map(|z| z.std()).collect::<Vec<_>>(),
        "consistency_lite": consistency_score(&fx, &video)?,
    });
    manifest.write(&out)?;
    emit(&format!("{} frames written to {}", video.shape()[0], out.join("frames").display()))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct DriftArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Comma-separated resampling scales to compare.
    #[arg(long)]
    pub r_values: Option<String>,
    #[command(flatten)]
    pub sampler: SamplerArgs,
}

pub fn run_drift(a: DriftArgs) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let seed = s.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let out = require(s.pick_opt(a.out_dir, "out_dir")?, "out-dir")?;
    let r_values = parse_list(&s.pick(a.r_values, "r_values", "0,0.7".to_string())?)?;
    let r = resolve(a.sampler, &s, seed, DEFAULT_DRIFT_ROUNDS)?;
    s.finish()?;

    let model = load_checkpoint(&r.checkpoint)?;
    let hash = checkpoint_hash(&r.checkpoint)?;
    let init = init_bundle(&model, &r.clip, r.cond_frames)?;
    let report = drift_probe(&model, &init, &r.sampler, &r_values)?;

    let out = prepare_out_dir(&out)?;
    std::fs::write(out.join("drift.csv"), report.to_csv())?;
    let mut manifest = RunManifest::new("drift-probe", seed, json!({
        "checkpoint": r.checkpoint.display().to_string(),
        "sampler": r.sampler,
        "r_values": r_values,
        "prompt": r.prompt,
    }));
    manifest.checkpoint_hash = Some(hash);
    manifest.artifacts.push("drift.csv".into());
    manifest.results = json!({ "summary": report.summary });
    manifest.write(&out)?;
    emit(&serde_json::to_string_pretty(&report.summary)?)?;
    Ok(())
}
