use std::path::PathBuf;

use clap::Args;
use longvid_core::guidance::{DEFAULT_CFG_SCALE, DEFAULT_RESAMPLE_SCALE};
use longvid_core::model::{save_checkpoint, ModelConfig, ScheduleConfig, VideoModel};
use longvid_core::synthdata::DEFAULT_CLIP_LEN;
use longvid_core::training::{loss_csv, loss_drop, train, TrainConfig};
use serde_json::json;

use super::data::{load_dataset, synth_dataset, DEFAULT_CLIPS};
use super::{emit, prepare_out_dir, require, DEFAULT_SEED};
use crate::config::Settings;
use crate::manifest::RunManifest;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// `gen-data` output; without it the dataset is regenerated from the seed.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Unconditional-branch probability.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub n_c_min: Option<usize>,
    #[arg(long)]
    pub n_c_max: Option<usize>,
    /// Frames per training window.
    #[arg(long)]
    pub n_g: Option<usize>,
    /// Co-training steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    pub pretrain_lr: Option<f32>,
    #[arg(long)]
    pub pretrain_batch: Option<usize>,
    /// Weight the ε-loss by 1/ᾱ; `false` trains on plain ε-MSE.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub v_loss: Option<bool>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub spatial_blocks: Option<usize>,
    #[arg(long)]
    pub temporal_blocks: Option<usize>,
    #[arg(long)]
    pub ip_tokens: Option<usize>,
    /// Attention heads in the denoiser blocks.
    #[arg(long)]
    pub heads: Option<usize>,
    /// `false` trains the ablation without denoiser temporal blocks.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub denoiser_temporal: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub zero_terminal_snr: Option<bool>,
    /// Guidance default recorded alongside the checkpoint.
    #[arg(long)]
    pub cfg_scale: Option<f32>,
    /// Resampling default recorded alongside the checkpoint.
    #[arg(long)]
    pub resample_scale: Option<f32>,
}

pub fn run(a: TrainArgs) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let seed = s.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let out = require(s.pick_opt(a.out_dir, "out_dir")?, "out-dir")?;
    let data_dir = s.pick_opt(a.data, "data")?;
    let clips = s.pick(a.clips, "clips", DEFAULT_CLIPS)?;
    let length = s.pick(a.length, "length", DEFAULT_CLIP_LEN)?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        p: s.pick(a.p, "p", d.p)?,
        n_c_min: s.pick(a.n_c_min, "n_c_min", d.n_c_min)?,
        n_c_max: s.pick(a.n_c_max, "n_c_max", d.n_c_max)?,
        n_g: s.pick(a.n_g, "n_g", d.n_g)?,
        steps: s.pick(a.steps, "steps", d.steps)?,
        lr: s.pick(a.lr, "lr", d.lr)?,
        batch: s.pick(a.batch, "batch", d.batch)?,
        seed,
        pretrain_steps: s.pick(a.pretrain_steps, "pretrain_steps", d.pretrain_steps)?,
        pretrain_lr: s.pick(a.pretrain_lr, "pretrain_lr", d.pretrain_lr)?,
        pretrain_batch: s.pick(a.pretrain_batch, "pretrain_batch", d.pretrain_batch)?,
        v_loss: s.pick(a.v_loss, "v_loss", d.v_loss)?,
        ..d
    };
    let m = ModelConfig::default();
    let model_cfg = ModelConfig {
        dim: s.pick(a.dim, "dim", m.dim)?,
        patch: s.pick(a.patch, "patch", m.patch)?,
        spatial_blocks: s.pick(a.spatial_blocks, "spatial_blocks", m.spatial_blocks)?,
        temporal_blocks: s.pick(a.temporal_blocks, "temporal_blocks", m.temporal_blocks)?,
        ip_tokens: s.pick(a.ip_tokens, "ip_tokens", m.ip_tokens)?,
        heads: s.pick(a.heads, "heads", m.heads)?,
        denoiser_temporal: s.pick(a.denoiser_temporal, "denoiser_temporal", m.denoiser_temporal)?,
        schedule: ScheduleConfig {
            zero_terminal_snr: s.pick(a.zero_terminal_snr, "zero_terminal_snr", false)?,
            ..ScheduleConfig::default()
        },
        seed,
        ..m
    };
    let cfg_scale = s.pick(a.cfg_scale, "cfg_scale", DEFAULT_CFG_SCALE)?;
    let resample_scale = s.pick(a.resample_scale, "resample_scale", DEFAULT_RESAMPLE_SCALE)?;
    s.finish()?;
    cfg.validate()?;

    let dataset = match &data_dir {
        Some(dir) => load_dataset(dir)?,
        None => synth_dataset(seed, clips, length)?,
    };
    let mut model = VideoModel::new(model_cfg.clone())?;
    let total = cfg.pretrain_steps + cfg.steps;
    let mut done = 0usize;
    let rows = train(&mut model, dataset.train(), &cfg, |row| {
        done += 1;
        if done % 500 == 0 || done == total {
            eprintln!("[{done}/{total}] {:?} step {} loss {:.5}", row.stage, row.step, row.loss);
        }
    })?;

    let out = prepare_out_dir(&out)?;
    let hash = save_checkpoint(&model, &out.join("checkpoint"))?;
    std::fs::write(out.join("loss.csv"), loss_csv(&rows))?;
    let config = json!({
        "train": cfg,
        "model": model_cfg,
        "data": data_dir.as_ref().map(|p| p.display().to_string()),
        "clips": dataset.clips.len(),
        "length": length,
        "cfg_scale": cfg_scale,
        "resample_scale": resample_scale,
    });
    let mut manifest = RunManifest::new("train", seed, config);
    manifest.checkpoint_hash = Some(hash.clone());
    manifest.artifacts = vec!["checkpoint/checkpoint.json".into(), "loss.csv".into()];
    let part = model.partition();
    let window = 100.min(rows.len().max(1));
    let co: Vec<_> = rows.iter().filter(|r| r.stage == longvid_core::training::Stage::Cotrain).cloned().collect();
    manifest.results = json!({
        "steps": rows.len(),
        "final_loss": rows.last().map(|r| r.loss),
        "loss_first_last_mean": loss_drop(&rows, window),
        "cotrain_first_last_mean": loss_drop(&co, window),
        "parameters": { "theta": part.theta_numel, "phi": part.phi_numel, "frozen": part.frozen_numel },
    });
    manifest.write(&out)?;
    emit(&format!("checkpoint {} ({hash})", out.join("checkpoint").display()))?;
    Ok(())
}
