//! Model and band documents (JSON).

use std::fs;
use std::path::Path;

use failprobe_core::conformal::ConformalBand;
use failprobe_core::pipeline::Detector;
use failprobe_core::trace::SplitAssignment;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::FileError;

pub const MODEL_FORMAT: &str = "failprobe-model";
pub const BAND_FORMAT: &str = "failprobe-band";
pub const ARTIFACT_VERSION: u32 = 1;

/// A fitted detector with the split it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub split: Option<SplitAssignment>,
    pub detector: Detector,
}

impl ModelFile {
    pub fn new(detector: Detector, split: Option<SplitAssignment>, seed: u64) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: ARTIFACT_VERSION,
            seed,
            split,
            detector,
        }
    }
}

/// Serialized [`ConformalBand`]. `q` may be `"inf"` / `"-inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandFile {
    pub format: String,
    pub version: u32,
    pub method_tag: String,
    pub alpha: f64,
    pub horizon: usize,
    #[serde(with = "ext_float")]
    pub q: f64,
    pub mu: Vec<f64>,
    pub modulation: Vec<f64>,
}

impl BandFile {
    pub fn from_band(band: &ConformalBand, method_tag: &str) -> Self {
        Self {
            format: BAND_FORMAT.into(),
            version: ARTIFACT_VERSION,
            method_tag: method_tag.into(),
            alpha: band.alpha(),
            horizon: band.horizon(),
            q: band.q(),
            mu: band.mu().to_vec(),
            modulation: band.modulation().to_vec(),
        }
    }

    pub fn to_band(&self) -> Result<ConformalBand, failprobe_core::Error> {
        if self.horizon != self.mu.len() {
            return Err(failprobe_core::Error::DimensionMismatch {
                expected: self.horizon,
                got: self.mu.len(),
            });
        }
        ConformalBand::from_parts(self.mu.clone(), self.modulation.clone(), self.q, self.alpha)
    }
}

/// Reals that may be infinite, written as numbers or `"inf"` / `"-inf"`.
mod ext_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" | "+inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("expected a real or \"inf\", got `{other}`"))),
            },
        }
    }
}

pub fn write_json<T: Serialize>(value: &T, path: &Path, pretty: bool) -> Result<(), FileError> {
    let mut text = if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .map_err(|e| FileError::schema(path, None, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| FileError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FileError> {
    let text = fs::read_to_string(path).map_err(|e| FileError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| FileError::schema(path, None, e.to_string()))
}

fn check_format(path: &Path, format: &str, version: u32, want: &str) -> Result<(), FileError> {
    if format != want || version != ARTIFACT_VERSION {
        return Err(FileError::schema(
            path,
            None,
            format!("expected `{want}` version {ARTIFACT_VERSION}, found `{format}` version {version}"),
        ));
    }
    Ok(())
}

pub fn save_model(model: &ModelFile, path: &Path) -> Result<(), FileError> {
    write_json(model, path, false)
}

pub fn load_model(path: &Path) -> Result<ModelFile, FileError> {
    let m: ModelFile = read_json(path)?;
    check_format(path, &m.format, m.version, MODEL_FORMAT)?;
    Ok(m)
}

pub fn save_band(band: &BandFile, path: &Path) -> Result<(), FileError> {
    write_json(band, path, true)
}

pub fn load_band(path: &Path) -> Result<BandFile, FileError> {
    let b: BandFile = read_json(path)?;
    check_format(path, &b.format, b.version, BAND_FORMAT)?;
    b.to_band().map_err(|e| FileError::schema(path, None, e.to_string()))?;
    Ok(b)
}
