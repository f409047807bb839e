//! Failure detection for generalist robot policies.
//!
//! `failprobe-core` turns recorded policy rollouts (per-step internal feature
//! tensors, token statistics and sampled action chunks) into per-step failure
//! scores, calibrates time-varying alarm thresholds with functional conformal
//! prediction, and evaluates detectors with the seen/unseen-task protocol.
//!
//! The crate is `no_std` and only needs `alloc`. File formats and the CLI live
//! in the `failprobe` companion crate.
//!
//! Module map:
//!
//! * [`trace`]: rollouts, datasets, seen/unseen splits, score traces.
//! * [`aggregation`]: collapsing multi-axis embeddings into one vector per step.
//! * [`baseline`]: token uncertainty, embedding distances, sample consistency,
//!   cluster entropy and action-chunk consistency (MMD) scores.
//! * [`probes`]: MLP and LSTM failure probes with analytic gradients, Adam, and
//!   the two-sided RND baseline.
//! * [`conformal`]: one-sided functional conformal bands and online detection.
//! * [`eval`]: max-so-far ROC-AUC, confusion metrics, alpha sweeps, grid search.
//! * [`synth`]: a deterministic rollout generator with a shared failure zone.
//! * [`pipeline`]: the method registry tying detectors to rollouts.
#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![deny(unsafe_code)]

extern crate alloc;

pub mod aggregation;
pub mod baseline;
pub mod conformal;
mod error;
pub mod eval;
pub mod linalg;
pub mod pipeline;
pub mod probes;
pub mod synth;
pub mod trace;

pub use error::{Error, Result};
pub use linalg::Matrix;
