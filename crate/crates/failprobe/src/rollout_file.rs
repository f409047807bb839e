//! One JSON Lines file per rollout.
//!
//! Line 1 is a header with ids, label, replan stride, step count, and the axis
//! labels and shape of every populated per-step field. Each following line is
//! one step with flat row-major arrays. Reals use shortest round-trip decimal
//! formatting, so save followed by load reproduces every value exactly.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use failprobe_core::trace::{Dataset, Outcome, RawEmbedding, Rollout, RolloutStep};
use failprobe_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::FileError;

pub const ROLLOUT_FORMAT: &str = "failprobe-rollout";
pub const ROLLOUT_VERSION: u32 = 1;
pub const ROLLOUT_EXTENSION: &str = "jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldShape {
    pub axes: Vec<String>,
    pub shape: Vec<usize>,
}

impl FieldShape {
    fn new(axes: &[&str], shape: &[usize]) -> Self {
        Self {
            axes: axes.iter().map(|a| a.to_string()).collect(),
            shape: shape.to_vec(),
        }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fields {
    pub embedding: FieldShape,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<FieldShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_entropies: Option<FieldShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_chunk: Option<FieldShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_samples: Option<FieldShape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub rollout_id: String,
    pub task_id: String,
    /// 1 for failure, 0 for success.
    pub label: u8,
    pub replan_stride: usize,
    pub n_steps: usize,
    pub fields: Fields,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub embedding: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_probs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_entropies: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_chunk: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_samples: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation_ref: Option<String>,
}

fn embedding_shape(e: &RawEmbedding) -> FieldShape {
    match *e {
        RawEmbedding::Token { n, dim, .. } => FieldShape::new(&["token", "feat"], &[n, dim]),
        RawEmbedding::Flow {
            horizon, diff, dim, ..
        } => FieldShape::new(&["horizon", "diff", "feat"], &[horizon, diff, dim]),
    }
}

/// Header describing `r`, taking field shapes from its first step.
pub fn header_of(r: &Rollout) -> Header {
    let s0 = r.steps.first();
    let fields = Fields {
        embedding: s0.map_or(FieldShape::new(&["token", "feat"], &[0, 0]), |s| embedding_shape(&s.embedding)),
        token_probs: s0
            .and_then(|s| s.token_probs.as_ref())
            .map(|p| FieldShape::new(&["token"], &[p.len()])),
        token_entropies: s0
            .and_then(|s| s.token_entropies.as_ref())
            .map(|p| FieldShape::new(&["token"], &[p.len()])),
        action_chunk: s0
            .and_then(|s| s.action_chunk.as_ref())
            .map(|m| FieldShape::new(&["horizon", "action"], &[m.rows(), m.cols()])),
        action_samples: s0.and_then(|s| s.action_samples.as_ref()).map(|v| {
            let (h, a) = v.first().map_or((0, 0), |m| (m.rows(), m.cols()));
            FieldShape::new(&["sample", "horizon", "action"], &[v.len(), h, a])
        }),
    };
    Header {
        format: ROLLOUT_FORMAT.into(),
        version: ROLLOUT_VERSION,
        rollout_id: r.rollout_id.clone(),
        task_id: r.task_id.clone(),
        label: r.label.as_label(),
        replan_stride: r.replan_stride,
        n_steps: r.len(),
        fields,
    }
}

fn step_record(t: usize, s: &RolloutStep) -> StepRecord {
    StepRecord {
        step: t,
        embedding: s.embedding.data().to_vec(),
        token_probs: s.token_probs.clone(),
        token_entropies: s.token_entropies.clone(),
        action_chunk: s.action_chunk.as_ref().map(|m| m.as_slice().to_vec()),
        action_samples: s
            .action_samples
            .as_ref()
            .map(|v| v.iter().flat_map(|m| m.as_slice().iter().copied()).collect()),
        observation_ref: s.observation_ref.clone(),
    }
}

/// Serializes one rollout to its JSON Lines text.
pub fn rollout_to_string(r: &Rollout) -> String {
    let mut out = serde_json::to_string(&header_of(r)).expect("header serializes");
    out.push('\n');
    for (t, s) in r.steps.iter().enumerate() {
        out.push_str(&serde_json::to_string(&step_record(t, s)).expect("step serializes"));
        out.push('\n');
    }
    out
}

fn is_safe_file_stem(id: &str) -> bool {
    !id.is_empty()
        && id != "."
        && id != ".."
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

pub fn write_rollout(r: &Rollout, path: &Path) -> Result<(), FileError> {
    let file = fs::File::create(path).map_err(|e| FileError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(rollout_to_string(r).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| FileError::io(path, e))
}

/// Parses one rollout file, checking every declared shape.
pub fn read_rollout(path: &Path) -> Result<Rollout, FileError> {
    let file = fs::File::open(path).map_err(|e| FileError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| FileError::io(path, e))?,
        None => return Err(FileError::schema(path, None, "file is empty")),
    };
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| FileError::schema(path, None, format!("bad header: {e}")))?;
    if header.format != ROLLOUT_FORMAT || header.version != ROLLOUT_VERSION {
        return Err(FileError::schema(
            path,
            None,
            format!(
                "unsupported format `{}` version {} (expected `{ROLLOUT_FORMAT}` {ROLLOUT_VERSION})",
                header.format, header.version
            ),
        ));
    }
    let label = Outcome::from_label(header.label).map_err(|e| FileError::schema(path, None, e.to_string()))?;
    check_axes(path, &header.fields)?;

    let mut steps = Vec::with_capacity(header.n_steps);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| FileError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: StepRecord = serde_json::from_str(&line)
            .map_err(|e| FileError::schema(path, Some(i), format!("bad step record: {e}")))?;
        if rec.step != i {
            return Err(FileError::schema(path, Some(i), format!("step index {} out of order", rec.step)));
        }
        steps.push(build_step(path, i, &header.fields, rec)?);
    }
    if steps.len() != header.n_steps {
        return Err(FileError::schema(
            path,
            None,
            format!("header declares {} steps, found {}", header.n_steps, steps.len()),
        ));
    }
    let rollout = Rollout {
        rollout_id: header.rollout_id,
        task_id: header.task_id,
        label,
        replan_stride: header.replan_stride,
        steps,
    };
    rollout
        .validate()
        .map_err(|e| FileError::schema(path, None, e.to_string()))?;
    Ok(rollout)
}

fn check_axes(path: &Path, f: &Fields) -> Result<(), FileError> {
    let bad = |name: &str, s: &FieldShape| {
        FileError::schema(
            path,
            None,
            format!("field `{name}` has axes {:?} with shape {:?}", s.axes, s.shape),
        )
    };
    let emb_ok = matches!(
        f.embedding.axes.iter().map(String::as_str).collect::<Vec<_>>().as_slice(),
        ["token", "feat"] | ["horizon", "diff", "feat"]
    ) && f.embedding.axes.len() == f.embedding.shape.len();
    if !emb_ok {
        return Err(bad("embedding", &f.embedding));
    }
    for (name, s, rank) in [
        ("token_probs", &f.token_probs, 1),
        ("token_entropies", &f.token_entropies, 1),
        ("action_chunk", &f.action_chunk, 2),
        ("action_samples", &f.action_samples, 3),
    ] {
        if let Some(s) = s {
            if s.shape.len() != rank || s.axes.len() != rank {
                return Err(bad(name, s));
            }
        }
    }
    Ok(())
}

fn take(
    path: &Path,
    step: usize,
    name: &str,
    declared: &Option<FieldShape>,
    values: Option<Vec<f64>>,
) -> Result<Option<Vec<f64>>, FileError> {
    match (declared, values) {
        (None, None) => Ok(None),
        (Some(_), None) => Err(FileError::schema(path, Some(step), format!("missing field `{name}`"))),
        (None, Some(_)) => Err(FileError::schema(
            path,
            Some(step),
            format!("field `{name}` is not declared in the header"),
        )),
        (Some(s), Some(v)) => {
            if v.len() != s.len() {
                return Err(FileError::schema(
                    path,
                    Some(step),
                    format!("`{name}` has {} values, header declares {:?} = {}", v.len(), s.shape, s.len()),
                ));
            }
            Ok(Some(v))
        }
    }
}

fn build_step(path: &Path, i: usize, f: &Fields, rec: StepRecord) -> Result<RolloutStep, FileError> {
    let core_err = |e: failprobe_core::Error| FileError::schema(path, Some(i), e.to_string());
    let emb = take(path, i, "embedding", &Some(f.embedding.clone()), Some(rec.embedding))?.unwrap_or_default();
    let embedding = match f.embedding.shape.as_slice() {
        &[n, dim] => RawEmbedding::token(n, dim, emb),
        &[h, k, dim] => RawEmbedding::flow(h, k, dim, emb),
        _ => unreachable!("checked by check_axes"),
    }
    .map_err(core_err)?;
    let mut step = RolloutStep::new(embedding);
    step.token_probs = take(path, i, "token_probs", &f.token_probs, rec.token_probs)?;
    step.token_entropies = take(path, i, "token_entropies", &f.token_entropies, rec.token_entropies)?;
    if let Some(v) = take(path, i, "action_chunk", &f.action_chunk, rec.action_chunk)? {
        let s = &f.action_chunk.as_ref().expect("declared").shape;
        step.action_chunk = Some(Matrix::new(s[0], s[1], v).map_err(core_err)?);
    }
    if let Some(v) = take(path, i, "action_samples", &f.action_samples, rec.action_samples)? {
        let s = &f.action_samples.as_ref().expect("declared").shape;
        let per = s[1] * s[2];
        let samples = (0..s[0])
            .map(|k| Matrix::new(s[1], s[2], v[k * per..(k + 1) * per].to_vec()))
            .collect::<Result<Vec<_>, _>>()
            .map_err(core_err)?;
        step.action_samples = Some(samples);
    }
    step.observation_ref = rec.observation_ref;
    Ok(step)
}

/// Rollout files in `dir`, sorted by file name.
pub fn rollout_paths(dir: &Path) -> Result<Vec<PathBuf>, FileError> {
    let entries = fs::read_dir(dir).map_err(|e| FileError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| FileError::io(dir, e))?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == ROLLOUT_EXTENSION) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads every `*.jsonl` rollout in `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset, FileError> {
    let paths = rollout_paths(dir)?;
    if paths.is_empty() {
        return Err(FileError::EmptyDataset(dir.to_path_buf()));
    }
    let mut seen = std::collections::BTreeMap::new();
    let mut rollouts = Vec::with_capacity(paths.len());
    for p in &paths {
        let r = read_rollout(p)?;
        if let Some(prev) = seen.insert(r.rollout_id.clone(), p.clone()) {
            return Err(FileError::DuplicateRollout {
                rollout_id: r.rollout_id,
                first: prev,
                second: p.clone(),
            });
        }
        rollouts.push(r);
    }
    Ok(Dataset::new(rollouts)?)
}

/// Writes `<rollout_id>.jsonl` for every rollout, creating `dir` if needed.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), FileError> {
    fs::create_dir_all(dir).map_err(|e| FileError::io(dir, e))?;
    for r in ds.rollouts() {
        if !is_safe_file_stem(&r.rollout_id) {
            return Err(FileError::schema(
                dir,
                None,
                format!("rollout id `{}` cannot be used as a file name", r.rollout_id),
            ));
        }
        let path = dir.join(format!("{}.{ROLLOUT_EXTENSION}", r.rollout_id));
        write_rollout(r, &path)?;
    }
    Ok(())
}
