use std::path::{Path, PathBuf};

use clap::Args;
use longvid_core::eval::{
    consistency_score, frechet_lite, read_frames, video_psnr_ssim, FeatureExtractor, FEATURE_SEED,
};
use longvid_core::numcore::{fft1, Tensor};
use serde::Serialize;
use serde_json::json;

use super::{emit, prepare_out_dir, DEFAULT_SEED};
use crate::config::Settings;
use crate::manifest::RunManifest;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Video to score: a directory of frame PPMs or an FFT1 pixel video `[F, 3, H, W]`. Repeatable.
    #[arg(long = "input")]
    pub inputs: Vec<PathBuf>,
    /// Reference video for PSNR/SSIM, paired with the inputs in order. Repeatable.
    #[arg(long = "ref")]
    pub refs: Vec<PathBuf>,
    /// Reference set for Fréchet-lite; both sets need more videos than the 32 feature dimensions. Repeatable.
    #[arg(long = "fvd-ref")]
    pub fvd_refs: Vec<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Metrics {
    videos: usize,
    consistency_lite: f64,
    consistency_per_video: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    psnr_vs_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ssim_vs_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fvd_lite: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fvd_lite_regularized: Option<bool>,
}

fn load_video(path: &Path) -> Result<Tensor, CliError> {
    if path.is_dir() {
        Ok(read_frames(path)?)
    } else {
        Ok(fft1::load(path)?)
    }
}

fn paths(flag: Vec<PathBuf>, s: &Settings, key: &str) -> Result<Vec<PathBuf>, CliError> {
    let from_file: Option<String> = s.pick_opt(None, key)?;
    if !flag.is_empty() {
        return Ok(flag);
    }
    Ok(from_file
        .map(|v| v.split(',').map(|p| PathBuf::from(p.trim())).collect())
        .unwrap_or_default())
}

pub fn run(a: EvaluateArgs) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let seed = s.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let out = s.pick_opt(a.out_dir, "out_dir")?;
    let inputs = paths(a.inputs, &s, "input")?;
    let refs = paths(a.refs, &s, "ref")?;
    let fvd_refs = paths(a.fvd_refs, &s, "fvd_ref")?;
    s.finish()?;
    if inputs.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one --input".into()));
    }
    if !refs.is_empty() && refs.len() != inputs.len() {
        return Err(CliError::Usage(format!("{} --ref paths for {} inputs", refs.len(), inputs.len())));
    }

    let videos = inputs.iter().map(|p| load_video(p)).collect::<Result<Vec<_>, _>>()?;
    let fx = FeatureExtractor::new(FEATURE_SEED, videos[0].shape()[1]);
    let per_video = videos.iter().map(|v| consistency_score(&fx, v)).collect::<Result<Vec<_>, _>>()?;
    let mut m = Metrics {
        videos: videos.len(),
        consistency_lite: per_video.iter().sum::<f64>() / per_video.len() as f64,
        consistency_per_video: per_video,
        psnr_vs_ref: None,
        ssim_vs_ref: None,
        fvd_lite: None,
        fvd_lite_regularized: None,
    };
    if !refs.is_empty() {
        let (mut p, mut q) = (0.0, 0.0);
        for (v, r) in videos.iter().zip(&refs) {
            let (a, b) = video_psnr_ssim(v, &load_video(r)?, 1.0)?;
            p += a;
            q += b;
        }
        m.psnr_vs_ref = Some(p / refs.len() as f64);
        m.ssim_vs_ref = Some(q / refs.len() as f64);
    }
    if !fvd_refs.is_empty() {
        let real = fvd_refs.iter().map(|p| load_video(p)).collect::<Result<Vec<_>, _>>()?;
        let f = frechet_lite(&fx.fvd_features_batch(&videos)?, &fx.fvd_features_batch(&real)?)?;
        m.fvd_lite = Some(f.distance);
        m.fvd_lite_regularized = Some(f.regularized);
    }

    let text = serde_json::to_string_pretty(&m)?;
    if let Some(dir) = out {
        let dir = prepare_out_dir(&dir)?;
        std::fs::write(dir.join("metrics.json"), text.clone() + "\n")?;
        let show = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>();
        let config = json!({ "input": show(&inputs), "ref": show(&refs), "fvd_ref": show(&fvd_refs) });
        let mut manifest = RunManifest::new("evaluate", seed, config);
        manifest.artifacts = vec!["metrics.json".into()];
        manifest.results = serde_json::to_value(&m)?;
        manifest.write(&dir)?;
    }
    emit(&text)?;
    Ok(())
}
