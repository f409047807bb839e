//! File formats and the `failprobe` command-line tool.
//!
//! * [`rollout_file`]: one JSON Lines document per rollout, with declared
//!   axis shapes validated on load.
//! * [`artifacts`]: fitted detectors and conformal bands as JSON.
//! * [`config`]: TOML training and generator configs.
//! * [`report`]: CSV reports, curves and tables.
//! * [`cli`]: the command surface (`synth`, `train`, `score`, `calibrate`,
//!   `eval`, `sweep`, `grid`, `export-embeddings`).

pub mod artifacts;
pub mod cli;
pub mod config;
mod error;
pub mod report;
pub mod rollout_file;

pub use error::{core_kind, FileError};
pub use rollout_file::{load_dataset, save_dataset};
