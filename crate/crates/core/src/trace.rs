//! Rollouts, datasets, seen/unseen splits and per-step score traces.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::linalg::{floor_tolerant, Matrix};
use crate::{Error, Result};

/// Raw per-step feature tensor dumped from the policy, with labeled axes.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum RawEmbedding {
    /// `(token: n, feat: dim)`, row-major, from token-decoding policies.
    Token { n: usize, dim: usize, data: Vec<f64> },
    /// `(horizon: H, diff: k, feat: dim)`, row-major, from flow-matching policies.
    Flow {
        horizon: usize,
        diff: usize,
        dim: usize,
        data: Vec<f64>,
    },
}

/// Axis labels and sizes of a [`RawEmbedding`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EmbeddingShape {
    Token { n: usize, dim: usize },
    Flow { horizon: usize, diff: usize, dim: usize },
}

impl EmbeddingShape {
    pub fn len(&self) -> usize {
        match *self {
            EmbeddingShape::Token { n, dim } => n * dim,
            EmbeddingShape::Flow { horizon, diff, dim } => horizon * diff * dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RawEmbedding {
    pub fn token(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let e = RawEmbedding::Token { n, dim, data };
        e.check()?;
        Ok(e)
    }

    pub fn flow(horizon: usize, diff: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        let e = RawEmbedding::Flow {
            horizon,
            diff,
            dim,
            data,
        };
        e.check()?;
        Ok(e)
    }

    pub fn shape(&self) -> EmbeddingShape {
        match *self {
            RawEmbedding::Token { n, dim, .. } => EmbeddingShape::Token { n, dim },
            RawEmbedding::Flow {
                horizon, diff, dim, ..
            } => EmbeddingShape::Flow { horizon, diff, dim },
        }
    }

    pub fn data(&self) -> &[f64] {
        match self {
            RawEmbedding::Token { data, .. } | RawEmbedding::Flow { data, .. } => data,
        }
    }

    fn check(&self) -> Result<()> {
        let want = self.shape().len();
        if want != self.data().len() {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: self.data().len(),
            });
        }
        Ok(())
    }
}

/// Trajectory-level outcome label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Outcome {
    Success,
    Failure,
}

impl Outcome {
    /// `y = 1` for failure, `0` for success.
    pub fn as_label(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Failure => 1,
        }
    }

    pub fn from_label(y: u8) -> Result<Self> {
        match y {
            0 => Ok(Outcome::Success),
            1 => Ok(Outcome::Failure),
            other => Err(Error::InvalidData(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn is_failure(self) -> bool {
        self == Outcome::Failure
    }
}

/// Everything recorded at one decision step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RolloutStep {
    pub embedding: RawEmbedding,
    /// Probability of each sampled token, in `(0, 1]`.
    pub token_probs: Option<Vec<f64>>,
    /// Entropy (nats) of each token's predictive distribution.
    pub token_entropies: Option<Vec<f64>>,
    /// Predicted action chunk, `H x a`.
    pub action_chunk: Option<Matrix>,
    /// Several independently sampled chunks, each `H x a`.
    pub action_samples: Option<Vec<Matrix>>,
    /// Opaque pointer to the raw observation; never read by any detector.
    pub observation_ref: Option<String>,
}

impl RolloutStep {
    pub fn new(embedding: RawEmbedding) -> Self {
        Self {
            embedding,
            token_probs: None,
            token_entropies: None,
            action_chunk: None,
            action_samples: None,
            observation_ref: None,
        }
    }

    fn signature(&self) -> StepSignature {
        StepSignature {
            embedding: self.embedding.shape(),
            token_probs: self.token_probs.as_ref().map(Vec::len),
            token_entropies: self.token_entropies.as_ref().map(Vec::len),
            action_chunk: self.action_chunk.as_ref().map(|m| (m.rows(), m.cols())),
            action_samples: self
                .action_samples
                .as_ref()
                .map(|s| (s.len(), s.first().map_or((0, 0), |m| (m.rows(), m.cols())))),
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
struct StepSignature {
    embedding: EmbeddingShape,
    token_probs: Option<usize>,
    token_entropies: Option<usize>,
    action_chunk: Option<(usize, usize)>,
    action_samples: Option<(usize, (usize, usize))>,
}

/// One policy execution.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Rollout {
    pub rollout_id: String,
    pub task_id: String,
    pub label: Outcome,
    /// Number of actions executed between decisions (H').
    pub replan_stride: usize,
    pub steps: Vec<RolloutStep>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks shape consistency and value ranges of every step.
    pub fn validate(&self) -> Result<()> {
        let bad = |step: usize, msg: String| {
            Error::InvalidData(format!("rollout `{}` step {step}: {msg}", self.rollout_id))
        };
        if self.steps.is_empty() {
            return Err(Error::InvalidData(format!("rollout `{}` has no steps", self.rollout_id)));
        }
        if self.replan_stride == 0 {
            return Err(Error::InvalidData(format!(
                "rollout `{}`: replan_stride must be >= 1",
                self.rollout_id
            )));
        }
        let first = self.steps[0].signature();
        for (i, step) in self.steps.iter().enumerate() {
            step.embedding.check().map_err(|e| bad(i, format!("{e}")))?;
            if step.embedding.shape().is_empty() {
                return Err(bad(i, "empty embedding".into()));
            }
            let sig = step.signature();
            if sig != first {
                return Err(bad(i, format!("field shapes {sig:?} differ from step 0 {first:?}")));
            }
            if let Some(p) = &step.token_probs {
                if let Some(v) = p.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
                    return Err(bad(i, format!("token probability {v} outside (0, 1]")));
                }
            }
            if let Some(h) = &step.token_entropies {
                if let Some(v) = h.iter().find(|&&v| !(v >= 0.0 && v.is_finite())) {
                    return Err(bad(i, format!("token entropy {v} is negative or non-finite")));
                }
            }
            if let Some(chunk) = &step.action_chunk {
                if self.replan_stride > chunk.rows() {
                    return Err(bad(
                        i,
                        format!(
                            "replan_stride {} exceeds chunk horizon {}",
                            self.replan_stride,
                            chunk.rows()
                        ),
                    ));
                }
            }
            if let Some(samples) = &step.action_samples {
                if samples.is_empty() {
                    return Err(bad(i, "action_samples is empty".into()));
                }
                let (r, c) = (samples[0].rows(), samples[0].cols());
                if samples.iter().any(|m| m.rows() != r || m.cols() != c) {
                    return Err(bad(i, "action samples differ in shape".into()));
                }
            }
            let finite = step.embedding.data().iter().all(|v| v.is_finite())
                && step.action_chunk.as_ref().map_or(true, |m| m.as_slice().iter().all(|v| v.is_finite()))
                && step.action_samples.as_ref().map_or(true, |s| {
                    s.iter().all(|m| m.as_slice().iter().all(|v| v.is_finite()))
                });
            if !finite {
                return Err(bad(i, "non-finite value".into()));
            }
        }
        Ok(())
    }

    /// Copy of this rollout cut to its first `n` steps.
    pub fn truncated(&self, n: usize) -> Rollout {
        let mut r = self.clone();
        r.steps.truncate(n);
        r
    }
}

/// A validated collection of rollouts indexed by task.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rollouts: Vec<Rollout>,
    task_index: BTreeMap<String, Vec<String>>,
}

impl Dataset {
    pub fn new(rollouts: Vec<Rollout>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut task_index: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &rollouts {
            r.validate()?;
            if !seen.insert(r.rollout_id.clone()) {
                return Err(Error::InvalidData(format!("duplicate rollout_id `{}`", r.rollout_id)));
            }
            task_index
                .entry(r.task_id.clone())
                .or_default()
                .push(r.rollout_id.clone());
        }
        Ok(Self {
            rollouts,
            task_index,
        })
    }

    pub fn rollouts(&self) -> &[Rollout] {
        &self.rollouts
    }

    pub fn into_rollouts(self) -> Vec<Rollout> {
        self.rollouts
    }

    /// Task id to rollout ids, in dataset order.
    pub fn task_index(&self) -> &BTreeMap<String, Vec<String>> {
        &self.task_index
    }

    pub fn len(&self) -> usize {
        self.rollouts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn get(&self, rollout_id: &str) -> Option<&Rollout> {
        self.rollouts.iter().find(|r| r.rollout_id == rollout_id)
    }

    /// Rollouts whose ids are in `ids`, in dataset order.
    pub fn select<'a>(&'a self, ids: &BTreeSet<String>) -> Vec<&'a Rollout> {
        self.rollouts
            .iter()
            .filter(|r| ids.contains(&r.rollout_id))
            .collect()
    }
}

/// Which part of a [`SplitAssignment`] a rollout belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Split {
    Train,
    EvalSeen,
    EvalUnseen,
}

impl Split {
    pub fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::EvalSeen => "eval_seen",
            Split::EvalUnseen => "eval_unseen",
        }
    }
}

/// Train / eval-seen / eval-unseen partition of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitAssignment {
    pub unseen_task_ids: BTreeSet<String>,
    pub train_ids: BTreeSet<String>,
    pub eval_seen_ids: BTreeSet<String>,
    pub eval_unseen_ids: BTreeSet<String>,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn ids(&self, split: Split) -> &BTreeSet<String> {
        match split {
            Split::Train => &self.train_ids,
            Split::EvalSeen => &self.eval_seen_ids,
            Split::EvalUnseen => &self.eval_unseen_ids,
        }
    }

    pub fn split_of(&self, rollout_id: &str) -> Option<Split> {
        [Split::Train, Split::EvalSeen, Split::EvalUnseen]
            .into_iter()
            .find(|s| self.ids(*s).contains(rollout_id))
    }

    pub fn select<'a>(&self, ds: &'a Dataset, split: Split) -> Vec<&'a Rollout> {
        ds.select(self.ids(split))
    }
}

/// Holds out `n_unseen_tasks` whole tasks and splits every remaining task's
/// rollouts `train_frac` / `1 - train_frac` into train and eval-seen.
pub fn split_dataset(
    ds: &Dataset,
    n_unseen_tasks: usize,
    train_frac: f64,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_frac must lie in (0, 1), got {train_frac}"
        )));
    }
    let n_tasks = ds.task_index.len();
    if n_tasks <= n_unseen_tasks {
        return Err(Error::TooFewTasks {
            needed: n_unseen_tasks,
            found: n_tasks,
        });
    }
    if let Some((task, ids)) = ds.task_index.iter().find(|(_, ids)| ids.len() < 2) {
        return Err(Error::InvalidArgument(format!(
            "task `{task}` has {} rollout(s); at least 2 are required",
            ids.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks: Vec<&String> = ds.task_index.keys().collect();
    tasks.shuffle(&mut rng);
    let unseen: BTreeSet<String> = tasks[..n_unseen_tasks].iter().map(|t| (*t).clone()).collect();

    let mut out = SplitAssignment {
        unseen_task_ids: unseen,
        train_ids: BTreeSet::new(),
        eval_seen_ids: BTreeSet::new(),
        eval_unseen_ids: BTreeSet::new(),
        seed,
    };
    // Iterate in sorted task order so the RNG stream does not depend on the
    // task shuffle above.
    for (task, ids) in &ds.task_index {
        if out.unseen_task_ids.contains(task) {
            out.eval_unseen_ids.extend(ids.iter().cloned());
            continue;
        }
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let n_train = floor_tolerant(train_frac * ids.len() as f64);
        let (train, eval) = ids.split_at(n_train);
        out.train_ids.extend(train.iter().cloned());
        out.eval_seen_ids.extend(eval.iter().cloned());
    }
    Ok(out)
}

/// Cuts every rollout to the minimum step count of its task.
pub fn truncate_to_min_length(ds: &Dataset) -> Dataset {
    let mut min_len: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &ds.rollouts {
        let e = min_len.entry(r.task_id.as_str()).or_insert(usize::MAX);
        *e = (*e).min(r.len());
    }
    let rollouts = ds
        .rollouts
        .iter()
        .map(|r| r.truncated(min_len[r.task_id.as_str()]))
        .collect();
    Dataset {
        rollouts,
        task_index: ds.task_index.clone(),
    }
}

/// Per-step failure scores of one rollout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScoreTrace {
    pub rollout_id: String,
    pub values: Vec<f64>,
    pub method_tag: String,
}

impl ScoreTrace {
    pub fn new(rollout_id: impl Into<String>, values: Vec<f64>, method_tag: impl Into<String>) -> Self {
        Self {
            rollout_id: rollout_id.into(),
            values,
            method_tag: method_tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }
}
