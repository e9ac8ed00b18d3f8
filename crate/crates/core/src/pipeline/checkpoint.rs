use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Models, PipelineError, StageConfig};
use crate::textlm::LoraConfig;

pub const FORMAT_VERSION: u32 = 1;

const BLOBS: [(&str, &str); 4] =
    [("encoder.bin", "encoder."), ("projector.bin", "projector."), ("lm.bin", "lm."), ("adapters.bin", "adapters.")];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub stage: u8,
    pub step: usize,
    pub seed: u64,
    /// Hex SHA-256 of `config.json`.
    pub config_digest: String,
    pub metrics: BTreeMap<String, f64>,
    pub format_version: u32,
}

/// Contents of `config.json`: enough to rebuild the models before the
/// parameter blobs are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavedConfig {
    pub model: ModelConfig,
    /// Present once LoRA adapters have been attached.
    pub lora: Option<LoraConfig>,
    pub stage: StageConfig,
}

fn digest(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn save_checkpoint(
    dir: &Path,
    models: &Models,
    stage_cfg: &StageConfig,
    step: usize,
    metrics: BTreeMap<String, f64>,
) -> Result<CheckpointManifest, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let saved =
        SavedConfig { model: models.config.clone(), lora: models.lm.lora_config().cloned(), stage: stage_cfg.clone() };
    let config = serde_json::to_string_pretty(&saved).map_err(|e| PipelineError::io(dir.join("config.json"), e))?;
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| PipelineError::io(p, e))
    };
    write("config.json", config.as_bytes())?;
    for (file, prefix) in BLOBS {
        let p = dir.join(file);
        let mut w = BufWriter::new(File::create(&p).map_err(|e| PipelineError::io(&p, e))?);
        models.store.write_blob(prefix, &mut w)?;
        w.flush().map_err(|e| PipelineError::io(&p, e))?;
    }
    let manifest = CheckpointManifest {
        stage: stage_cfg.stage,
        step,
        seed: stage_cfg.seed,
        config_digest: digest(config.as_bytes()),
        metrics: metrics.into_iter().filter(|(_, v)| v.is_finite()).collect(),
        format_version: FORMAT_VERSION,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::io(dir.join("manifest.json"), e))?;
    write("manifest.json", json.as_bytes())?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<(CheckpointManifest, SavedConfig, Models), PipelineError> {
    let mpath = dir.join("manifest.json");
    if !mpath.is_file() {
        return Err(PipelineError::MissingCheckpoint(dir.to_path_buf()));
    }
    let mtext = std::fs::read_to_string(&mpath).map_err(|e| PipelineError::io(&mpath, e))?;
    // Read the version alone first so a future layout reports as unsupported.
    let raw: serde_json::Value = serde_json::from_str(&mtext).map_err(|e| PipelineError::io(&mpath, e))?;
    let version = raw.get("format_version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if version != FORMAT_VERSION {
        return Err(PipelineError::VersionUnsupported(version));
    }
    let manifest: CheckpointManifest = serde_json::from_value(raw).map_err(|e| PipelineError::io(&mpath, e))?;
    let cpath = dir.join("config.json");
    let config = std::fs::read(&cpath).map_err(|e| PipelineError::io(&cpath, e))?;
    let found = digest(&config);
    if found != manifest.config_digest {
        return Err(PipelineError::DigestMismatch { expected: manifest.config_digest.clone(), found });
    }
    let saved: SavedConfig = serde_json::from_slice(&config).map_err(|e| PipelineError::io(&cpath, e))?;
    let mut models = Models::new(saved.model.clone(), manifest.seed)?;
    if let Some(lora) = &saved.lora {
        models.lm.attach_lora(&mut models.store, lora, 0)?;
    }
    for (file, prefix) in BLOBS {
        let p = dir.join(file);
        let r = BufReader::new(File::open(&p).map_err(|e| PipelineError::io(&p, e))?);
        models.store.read_blob(prefix, r)?;
    }
    Ok((manifest, saved, models))
}
