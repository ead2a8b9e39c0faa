//! Versioned JSON model files: every parameter matrix, the architecture,
//! the player table, the coordinate mean and the training configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result, TrainConfig, TrainedModel};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "shuttlenet-model";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    train_config: TrainConfig,
    model: TrainedModel,
}

pub fn save_model_to_string(model: &TrainedModel, cfg: &TrainConfig) -> Result<String> {
    let file = ModelFile {
        format: FORMAT_NAME.into(),
        version: MODEL_FORMAT_VERSION,
        train_config: cfg.clone(),
        model: model.clone(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn save_model(path: impl AsRef<Path>, model: &TrainedModel, cfg: &TrainConfig) -> Result<()> {
    fs::write(path, save_model_to_string(model, cfg)?)?;
    Ok(())
}

pub fn load_model_from_str(s: &str) -> Result<(TrainedModel, TrainConfig)> {
    let raw: serde_json::Value = serde_json::from_str(s)?;
    let format = raw.get("format").and_then(|v| v.as_str());
    let version = raw.get("version").and_then(|v| v.as_u64());
    if format != Some(FORMAT_NAME) || version != Some(u64::from(MODEL_FORMAT_VERSION)) {
        return Err(HarnessError::Version {
            found: raw
                .get("version")
                .map_or("missing".into(), |v| v.to_string()),
            expected: MODEL_FORMAT_VERSION,
        });
    }
    let file: ModelFile = serde_json::from_value(raw)?;
    file.model
        .net
        .config
        .validate()
        .map_err(|e| HarnessError::Config(format!("model file: {e}")))?;
    Ok((file.model, file.train_config))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(TrainedModel, TrainConfig)> {
    load_model_from_str(&fs::read_to_string(path)?)
}
