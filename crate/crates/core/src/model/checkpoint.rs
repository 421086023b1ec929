//! Checkpoint directory: `checkpoint.json` listing every parameter with its
//! shape and group, plus one FFT1 blob per parameter under `params/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ParamGroup, VideoModel};
use crate::error::{ensure, Result};
use crate::numcore::fft1;

pub const CHECKPOINT_FORMAT: &str = "longvid-checkpoint-1";
const MANIFEST: &str = "checkpoint.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub model: ModelConfig,
    pub params: Vec<CheckpointEntry>,
}

/// Writes `model` under `dir` and returns the checkpoint hash.
pub fn save_checkpoint(model: &VideoModel, dir: &Path) -> Result<String> {
    fs::create_dir_all(dir.join("params"))?;
    let mut params = Vec::with_capacity(model.store().len());
    for p in model.store().iter() {
        let file = format!("params/{}.fft1", p.name);
        fft1::save(dir.join(&file), &p.value)?;
        params.push(CheckpointEntry { name: p.name.clone(), shape: p.value.shape().to_vec(), group: p.group, file });
    }
    let manifest = CheckpointManifest { format: CHECKPOINT_FORMAT.into(), model: model.config().clone(), params };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)?)?;
    checkpoint_hash(dir)
}

pub fn load_checkpoint(dir: &Path) -> Result<VideoModel> {
    let manifest: CheckpointManifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    ensure!(manifest.format == CHECKPOINT_FORMAT, Format, "unknown checkpoint format {}", manifest.format);
    let mut model = VideoModel::new(manifest.model.clone())?;
    ensure!(manifest.params.len() == model.store().len(), Format,
        "checkpoint lists {} parameters, model has {}", manifest.params.len(), model.store().len());
    for entry in &manifest.params {
        let id = model.store().find(&entry.name)
            .ok_or_else(|| crate::Error::Format(format!("unknown parameter {}", entry.name)))?;
        let value = fft1::load(dir.join(&entry.file))?;
        let param = model.store_mut().get_mut(id);
        ensure!(value.shape() == param.value.shape() && entry.shape == value.shape(), Format,
            "{}: stored {:?}, expected {:?}", entry.name, value.shape(), param.value.shape());
        ensure!(entry.group == param.group, Format, "{}: group {:?} vs {:?}", entry.name, entry.group, param.group);
        param.value = value;
    }
    Ok(model)
}

/// SHA-256 over the manifest and every parameter blob, in manifest order.
pub fn checkpoint_hash(dir: &Path) -> Result<String> {
    let raw = fs::read(dir.join(MANIFEST))?;
    let manifest: CheckpointManifest = serde_json::from_slice(&raw)?;
    let mut h = Sha256::new();
    h.update(&raw);
    for entry in &manifest.params {
        h.update(fs::read(dir.join(&entry.file))?);
    }
    Ok(hex::encode(h.finalize()))
}
