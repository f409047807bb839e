//! TOML configuration files. Keys mirror the field names of
//! [`TrainConfig`] and [`SynthConfig`]; missing keys take their defaults.

use std::fs;
use std::path::Path;

use failprobe_core::probes::TrainConfig;
use failprobe_core::synth::SynthConfig;
use serde::de::DeserializeOwned;

use crate::error::FileError;

fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    toml::from_str(&text).map_err(|e| FileError::schema(path, None, e.to_string()))
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig, FileError> {
    let cfg: TrainConfig = load_toml(path)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_synth_config(path: &Path) -> Result<SynthConfig, FileError> {
    let cfg: SynthConfig = load_toml(path)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Renders a config as TOML, e.g. to seed a file for editing.
pub fn to_toml<T: serde::Serialize>(cfg: &T) -> String {
    toml::to_string(cfg).expect("configs serialize to TOML")
}
