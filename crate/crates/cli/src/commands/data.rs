//! `gen-data` and the loader that reads its output back.

use std::path::{Path, PathBuf};

use clap::Args;
use longvid_core::numcore::{fft1, Rng};
use longvid_core::synthdata::{caption_text, make_dataset, Clip, Dataset, SceneSpec, DEFAULT_CLIP_LEN};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{emit, prepare_out_dir, require, DEFAULT_SEED};
use crate::config::Settings;
use crate::manifest::{RunManifest, MANIFEST_FILE};
use crate::{CliError, Common};

pub const DEFAULT_CLIPS: usize = 500;

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of clips; the last tenth forms the eval split.
    #[arg(long)]
    pub clips: Option<usize>,
    /// Frames per clip.
    #[arg(long)]
    pub length: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClipEntry {
    index: usize,
    split: String,
    seed: u64,
    video: String,
    caption: String,
    caption_text: String,
    spec: SceneSpec,
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetListing {
    n_clips: usize,
    n_train: usize,
    length: usize,
    clips: Vec<ClipEntry>,
}

/// The same dataset `gen-data --seed <seed>` writes.
pub fn synth_dataset(seed: u64, clips: usize, length: usize) -> Result<Dataset, CliError> {
    Ok(make_dataset(clips, &Rng::new(seed).derive("data"), length)?)
}

pub fn run(args: GenDataArgs) -> Result<(), CliError> {
    let s = Settings::load(args.common.config.as_deref())?;
    let seed = s.pick(args.common.seed, "seed", DEFAULT_SEED)?;
    let out = require(s.pick_opt(args.out_dir, "out_dir")?, "out-dir")?;
    let n = s.pick(args.clips, "clips", DEFAULT_CLIPS)?;
    let length = s.pick(args.length, "length", DEFAULT_CLIP_LEN)?;
    s.finish()?;

    let data = synth_dataset(seed, n, length)?;
    let out = prepare_out_dir(&out)?;
    std::fs::create_dir_all(out.join("clips"))?;
    let mut entries = Vec::with_capacity(data.clips.len());
    let mut manifest = RunManifest::new("gen-data", seed, json!({ "clips": n, "length": length }));
    for (i, clip) in data.clips.iter().enumerate() {
        let video = format!("clips/clip_{i:05}.fft1");
        let caption = format!("clips/clip_{i:05}.tokens");
        fft1::save(out.join(&video), &clip.video)?;
        let ids: Vec<String> = clip.caption.iter().map(u32::to_string).collect();
        std::fs::write(out.join(&caption), ids.join(" ") + "\n")?;
        manifest.artifacts.push(video.clone());
        manifest.artifacts.push(caption.clone());
        entries.push(ClipEntry {
            index: i,
            split: if i < data.n_train { "train" } else { "eval" }.into(),
            seed: clip.seed,
            video,
            caption,
            caption_text: caption_text(&clip.caption)?,
            spec: clip.spec.clone(),
        });
    }
    let listing = DatasetListing { n_clips: n, n_train: data.n_train, length, clips: entries };
    manifest.results = serde_json::to_value(&listing)?;
    manifest.write(&out)?;
    emit(&format!("wrote {} clips ({} train) to {}", n, data.n_train, out.display()))?;
    Ok(())
}

/// Reads a `gen-data` output directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    let raw = std::fs::read(dir.join(MANIFEST_FILE))
        .map_err(|e| CliError::Runtime(format!("{}: not a gen-data directory ({e})", dir.display())))?;
    let manifest: serde_json::Value = serde_json::from_slice(&raw)?;
    if manifest["subcommand"] != "gen-data" {
        return Err(CliError::Runtime(format!("{} was not written by gen-data", dir.display())));
    }
    let listing: DatasetListing = serde_json::from_value(manifest["results"].clone())?;
    let mut clips = Vec::with_capacity(listing.clips.len());
    for e in &listing.clips {
        let video = fft1::load(dir.join(&e.video))?;
        let caption = std::fs::read_to_string(dir.join(&e.caption))?
            .split_whitespace()
            .map(|t| t.parse::<u32>().map_err(|err| CliError::Runtime(format!("{}: {err}", e.caption))))
            .collect::<Result<Vec<_>, _>>()?;
        clips.push(Clip { spec: e.spec.clone(), seed: e.seed, video, caption });
    }
    Ok(Dataset { clips, n_train: listing.n_train })
}
