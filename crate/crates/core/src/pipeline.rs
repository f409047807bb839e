//! Method registry: turns a [`DetectorConfig`] plus training rollouts into a
//! fitted detector that scores whole rollouts.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::aggregation::AggregationSpec;
use crate::baseline::{
    self, cluster_entropy, embedding_distance_score, flatten_chunks, stac_score, stac_single_score,
    total_variation, ActionSubspace, DistanceMetric, ReferenceBank, SubspaceName, DEFAULT_BANDWIDTH,
};
use crate::eval::{grid_search, roc_auc_of_traces, GridResult};
use crate::linalg::Matrix;
use crate::probes::{embed_rollout, rnd_fit, rnd_score, train_probe, Probe, ProbeKind, RndPair, TrainConfig};
use crate::trace::{Rollout, RolloutStep, ScoreTrace};
use crate::{Error, Result};

/// Every score the registry knows, with its tunable parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "name", rename_all = "snake_case"))]
pub enum ScoreMethod {
    TokenMaxProb,
    TokenAvgProb,
    TokenMaxEntropy,
    TokenAvgEntropy,
    #[cfg_attr(feature = "serde", serde(rename = "embedding_distance_score"))]
    EmbeddingDistance { metric: DistanceMetric },
    TotalVariation { subspace: SubspaceName },
    ClusterEntropy { threshold: f64 },
    #[cfg_attr(feature = "serde", serde(rename = "stac_score"))]
    Stac { bandwidth: f64 },
    #[cfg_attr(feature = "serde", serde(rename = "stac_single_score"))]
    StacSingle { bandwidth: f64 },
    #[cfg_attr(feature = "serde", serde(rename = "rnd_score"))]
    Rnd,
    #[cfg_attr(feature = "serde", serde(rename = "mlp_score_trace"))]
    Mlp,
    #[cfg_attr(feature = "serde", serde(rename = "lstm_score_trace"))]
    Lstm,
}

impl ScoreMethod {
    pub const NAMES: [&'static str; 13] = [
        "token_max_prob",
        "token_avg_prob",
        "token_max_entropy",
        "token_avg_entropy",
        "embedding_distance_score",
        "total_variation",
        "cluster_entropy",
        "stac_score",
        "stac_single_score",
        "rnd_score",
        "mlp_score_trace",
        "lstm_score_trace",
        // Alias kept for symmetry with the other distance metrics.
        "mahalanobis",
    ];

    pub const DEFAULT_KNN: usize = 10;
    pub const DEFAULT_CLUSTER_THRESHOLD: f64 = 0.01;

    pub fn name(&self) -> &'static str {
        match self {
            ScoreMethod::TokenMaxProb => "token_max_prob",
            ScoreMethod::TokenAvgProb => "token_avg_prob",
            ScoreMethod::TokenMaxEntropy => "token_max_entropy",
            ScoreMethod::TokenAvgEntropy => "token_avg_entropy",
            ScoreMethod::EmbeddingDistance { .. } => "embedding_distance_score",
            ScoreMethod::TotalVariation { .. } => "total_variation",
            ScoreMethod::ClusterEntropy { .. } => "cluster_entropy",
            ScoreMethod::Stac { .. } => "stac_score",
            ScoreMethod::StacSingle { .. } => "stac_single_score",
            ScoreMethod::Rnd => "rnd_score",
            ScoreMethod::Mlp => "mlp_score_trace",
            ScoreMethod::Lstm => "lstm_score_trace",
        }
    }

    /// Name plus parameters, e.g. `embedding_distance_score:euclid_knn`.
    pub fn tag(&self) -> String {
        match self {
            ScoreMethod::EmbeddingDistance { metric } => format!("{}:{}", self.name(), metric.name()),
            ScoreMethod::TotalVariation { subspace } => format!("{}:{}", self.name(), subspace.name()),
            _ => self.name().into(),
        }
    }

    /// Parses a registry name with default parameters.
    pub fn parse(name: &str) -> Result<Self> {
        let knn = Self::DEFAULT_KNN;
        Ok(match name {
            "token_max_prob" => ScoreMethod::TokenMaxProb,
            "token_avg_prob" => ScoreMethod::TokenAvgProb,
            "token_max_entropy" => ScoreMethod::TokenMaxEntropy,
            "token_avg_entropy" => ScoreMethod::TokenAvgEntropy,
            "embedding_distance_score" | "euclid_knn" => ScoreMethod::EmbeddingDistance {
                metric: DistanceMetric::EuclidKnn { k: knn },
            },
            "mahalanobis" => ScoreMethod::EmbeddingDistance {
                metric: DistanceMetric::Mahalanobis,
            },
            "cosine_knn" => ScoreMethod::EmbeddingDistance {
                metric: DistanceMetric::CosineKnn { k: knn },
            },
            "pca_kmeans" => ScoreMethod::EmbeddingDistance {
                metric: DistanceMetric::PcaKmeans { dim: 32, clusters: 16 },
            },
            "total_variation" => ScoreMethod::TotalVariation {
                subspace: SubspaceName::All,
            },
            "cluster_entropy" => ScoreMethod::ClusterEntropy {
                threshold: Self::DEFAULT_CLUSTER_THRESHOLD,
            },
            "stac_score" => ScoreMethod::Stac {
                bandwidth: DEFAULT_BANDWIDTH,
            },
            "stac_single_score" => ScoreMethod::StacSingle {
                bandwidth: DEFAULT_BANDWIDTH,
            },
            "rnd_score" => ScoreMethod::Rnd,
            "mlp_score_trace" | "mlp" => ScoreMethod::Mlp,
            "lstm_score_trace" | "lstm" => ScoreMethod::Lstm,
            other => return Err(Error::InvalidArgument(format!("unknown method `{other}`"))),
        })
    }

    /// Whether fitting needs training rollouts.
    pub fn needs_training(&self) -> bool {
        matches!(
            self,
            ScoreMethod::EmbeddingDistance { .. } | ScoreMethod::Rnd | ScoreMethod::Mlp | ScoreMethod::Lstm
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectorConfig {
    pub method: ScoreMethod,
    pub aggregation: AggregationSpec,
    /// Replace per-step scores by their running sum.
    pub cumsum: bool,
    pub train: TrainConfig,
}

impl DetectorConfig {
    pub fn new(method: ScoreMethod) -> Self {
        Self {
            method,
            aggregation: AggregationSpec::default(),
            cumsum: false,
            train: TrainConfig::default(),
        }
    }
}

/// Whatever a method learned from training rollouts.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum FittedModel {
    Stateless,
    Bank(ReferenceBank),
    Rnd(RndPair),
    Probe { probe: Probe, loss_curve: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Detector {
    pub config: DetectorConfig,
    pub model: FittedModel,
}

fn reference_bank(train: &[&Rollout], agg: &AggregationSpec) -> Result<(Matrix, Matrix)> {
    let (mut succ, mut fail) = (Vec::new(), Vec::new());
    for r in train {
        let e = embed_rollout(r, agg)?;
        if r.label.is_failure() {
            fail.push(e);
        } else {
            succ.push(e);
        }
    }
    if succ.is_empty() || fail.is_empty() {
        return Err(Error::SingleClass("reference bank"));
    }
    let cols = succ[0].cols();
    Ok((Matrix::vstack(&succ, cols)?, Matrix::vstack(&fail, cols)?))
}

impl Detector {
    /// Fits the configured method on `train` (ignored by stateless methods).
    pub fn fit(config: DetectorConfig, train: &[&Rollout]) -> Result<Self> {
        let model = match config.method {
            ScoreMethod::EmbeddingDistance { metric } => {
                let (s, f) = reference_bank(train, &config.aggregation)?;
                FittedModel::Bank(ReferenceBank::for_metric(s, f, &metric, config.train.seed)?)
            }
            ScoreMethod::Rnd => {
                let (s, f) = reference_bank(train, &config.aggregation)?;
                let bank = ReferenceBank::new(s, f)?;
                FittedModel::Rnd(rnd_fit(&bank, &config.train, config.train.seed)?)
            }
            ScoreMethod::Mlp | ScoreMethod::Lstm => {
                let kind = if config.method == ScoreMethod::Mlp {
                    ProbeKind::Mlp
                } else {
                    ProbeKind::Lstm
                };
                let t = train_probe(train, kind, &config.train, &config.aggregation)?;
                FittedModel::Probe {
                    probe: t.probe,
                    loss_curve: t.loss_curve,
                }
            }
            _ => FittedModel::Stateless,
        };
        Ok(Self { config, model })
    }

    /// Embedding dimension the fitted model expects, if any.
    pub fn input_dim(&self) -> Option<usize> {
        match &self.model {
            FittedModel::Stateless => None,
            FittedModel::Bank(b) => Some(b.dim()),
            FittedModel::Rnd(p) => Some(p.input_dim()),
            FittedModel::Probe { probe, .. } => Some(probe.input_dim()),
        }
    }

    /// Per-step score trace for one rollout.
    pub fn score(&self, rollout: &Rollout) -> Result<ScoreTrace> {
        let values = self.raw_scores(rollout)?;
        let trace = ScoreTrace::new(rollout.rollout_id.clone(), values, self.config.method.tag());
        Ok(if self.config.cumsum {
            baseline::accumulate(&trace)
        } else {
            trace
        })
    }

    pub fn score_all(&self, rollouts: &[&Rollout]) -> Result<Vec<ScoreTrace>> {
        rollouts.iter().map(|r| self.score(r)).collect()
    }

    fn raw_scores(&self, r: &Rollout) -> Result<Vec<f64>> {
        let agg = &self.config.aggregation;
        let per_step = |f: &dyn Fn(usize, &RolloutStep) -> Result<f64>| -> Result<Vec<f64>> {
            r.steps.iter().enumerate().map(|(t, s)| f(t, s)).collect()
        };
        let missing = |field: &'static str, step: usize| Error::MissingField {
            field,
            rollout_id: r.rollout_id.clone(),
            step,
        };
        let probs = |t: usize, s: &RolloutStep| s.token_probs.clone().ok_or_else(|| missing("token_probs", t));
        let ents = |t: usize, s: &RolloutStep| {
            s.token_entropies
                .clone()
                .ok_or_else(|| missing("token_entropies", t))
        };
        let samples = |t: usize, s: &RolloutStep| -> Result<Matrix> {
            let chunks = s.action_samples.as_ref().ok_or_else(|| missing("action_samples", t))?;
            flatten_chunks(chunks)
        };
        let action_dim = |t: usize, s: &RolloutStep| -> Result<usize> {
            s.action_samples
                .as_ref()
                .and_then(|c| c.first())
                .map(Matrix::cols)
                .ok_or_else(|| missing("action_samples", t))
        };

        match (&self.config.method, &self.model) {
            (ScoreMethod::TokenMaxProb, _) => per_step(&|t, s| baseline::token_max_prob(&probs(t, s)?)),
            (ScoreMethod::TokenAvgProb, _) => per_step(&|t, s| baseline::token_avg_prob(&probs(t, s)?)),
            (ScoreMethod::TokenMaxEntropy, _) => per_step(&|t, s| baseline::token_max_entropy(&ents(t, s)?)),
            (ScoreMethod::TokenAvgEntropy, _) => per_step(&|t, s| baseline::token_avg_entropy(&ents(t, s)?)),
            (ScoreMethod::TotalVariation { subspace }, _) => per_step(&|t, s| {
                let a = action_dim(t, s)?;
                total_variation(&samples(t, s)?, &ActionSubspace::standard(*subspace, a), a)
            }),
            (ScoreMethod::ClusterEntropy { threshold }, _) => {
                per_step(&|t, s| cluster_entropy(&samples(t, s)?, *threshold))
            }
            (ScoreMethod::Stac { bandwidth }, _) => {
                let mut out = Vec::with_capacity(r.len());
                for (t, s) in r.steps.iter().enumerate() {
                    let curr = s.action_samples.as_ref().ok_or_else(|| missing("action_samples", t))?;
                    if t == 0 {
                        out.push(0.0);
                        continue;
                    }
                    let prev = r.steps[t - 1]
                        .action_samples
                        .as_ref()
                        .ok_or_else(|| missing("action_samples", t - 1))?;
                    out.push(stac_score(prev, curr, r.replan_stride, *bandwidth)?);
                }
                Ok(out)
            }
            (ScoreMethod::StacSingle { bandwidth }, _) => {
                let mut out = Vec::with_capacity(r.len());
                for (t, s) in r.steps.iter().enumerate() {
                    let curr = s.action_chunk.as_ref().ok_or_else(|| missing("action_chunk", t))?;
                    if t == 0 {
                        out.push(0.0);
                        continue;
                    }
                    let prev = r.steps[t - 1]
                        .action_chunk
                        .as_ref()
                        .ok_or_else(|| missing("action_chunk", t - 1))?;
                    out.push(stac_single_score(prev, curr, r.replan_stride, *bandwidth)?);
                }
                Ok(out)
            }
            (ScoreMethod::EmbeddingDistance { metric }, FittedModel::Bank(bank)) => {
                let e = embed_rollout(r, agg)?;
                e.iter_rows().map(|row| embedding_distance_score(row, bank, metric)).collect()
            }
            (ScoreMethod::Rnd, FittedModel::Rnd(pair)) => {
                let e = embed_rollout(r, agg)?;
                e.iter_rows().map(|row| rnd_score(pair, row)).collect()
            }
            (ScoreMethod::Mlp | ScoreMethod::Lstm, FittedModel::Probe { probe, .. }) => {
                probe.scores(&embed_rollout(r, agg)?)
            }
            (m, _) => Err(Error::InvalidArgument(format!(
                "detector for `{}` was not fitted with a matching model",
                m.name()
            ))),
        }
    }
}

/// `labels[i]` is true when rollout `i` failed.
pub fn labels_of(rollouts: &[&Rollout]) -> Vec<bool> {
    rollouts.iter().map(|r| r.label.is_failure()).collect()
}

/// Cuts each rollout to the shortest length among the given rollouts of its task.
pub fn truncate_per_task(rollouts: &[&Rollout]) -> Vec<Rollout> {
    let mut min_len: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rollouts {
        let e = min_len.entry(r.task_id.as_str()).or_insert(usize::MAX);
        *e = (*e).min(r.len());
    }
    rollouts
        .iter()
        .map(|r| r.truncated(min_len[r.task_id.as_str()]))
        .collect()
}

/// ROC-AUC of a fitted detector on per-task truncated rollouts, using each
/// trace's final max-so-far score.
pub fn roc_auc_on(detector: &Detector, rollouts: &[&Rollout]) -> Result<f64> {
    let cut = truncate_per_task(rollouts);
    let refs: Vec<&Rollout> = cut.iter().collect();
    let traces = detector.score_all(&refs)?;
    roc_auc_of_traces(&traces, &labels_of(&refs))
}

/// Fits every configuration on `train` and ranks them by ROC-AUC on `eval_seen`.
pub fn detector_grid_search(
    grid: &[DetectorConfig],
    train: &[&Rollout],
    eval_seen: &[&Rollout],
) -> Result<GridResult<DetectorConfig>> {
    grid_search(grid, |cfg| {
        let det = Detector::fit(cfg.clone(), train)?;
        roc_auc_on(&det, eval_seen)
    })
}

/// Learning-rate by L2-weight grid around `base` for the learned probes.
pub fn probe_grid(base: &DetectorConfig, learning_rates: &[f64], l2_weights: &[f64]) -> Vec<DetectorConfig> {
    let mut out = Vec::with_capacity(learning_rates.len() * l2_weights.len());
    for &lr in learning_rates {
        for &l2 in l2_weights {
            let mut c = base.clone();
            c.train.learning_rate = lr;
            c.train.l2_weight = l2;
            out.push(c);
        }
    }
    out
}

pub const DEFAULT_PROBE_LEARNING_RATES: [f64; 3] = [1e-4, 3e-4, 1e-3];
pub const DEFAULT_PROBE_L2_WEIGHTS: [f64; 3] = [1e-3, 1e-2, 1e-1];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn data() -> crate::trace::Dataset {
        generate(&SynthConfig {
            n_tasks: 2,
            n_unseen_tasks: 1,
            rollouts_per_task: 6,
            feat_dim: 6,
            rollout_len: 12,
            n_action_samples: 4,
            ..SynthConfig::default()
        })
        .unwrap()
        .0
    }

    #[test]
    fn registry_names_round_trip() {
        for name in &ScoreMethod::NAMES[..12] {
            assert_eq!(ScoreMethod::parse(name).unwrap().name(), *name);
        }
        assert!(ScoreMethod::parse("nope").is_err());
    }

    #[test]
    fn every_method_scores_synthetic_rollouts() {
        let ds = data();
        let all: Vec<&Rollout> = ds.rollouts().iter().collect();
        for name in &ScoreMethod::NAMES[..12] {
            let mut cfg = DetectorConfig::new(ScoreMethod::parse(name).unwrap());
            if let ScoreMethod::EmbeddingDistance { .. } = cfg.method {
                cfg.method = ScoreMethod::EmbeddingDistance {
                    metric: DistanceMetric::EuclidKnn { k: 3 },
                };
            }
            cfg.train.epochs = 2;
            cfg.train.hidden = 4;
            let det = Detector::fit(cfg, &all).unwrap();
            let tr = det.score(all[0]).unwrap();
            assert_eq!(tr.len(), 12, "{name}");
            assert!(tr.values.iter().all(|v| v.is_finite()), "{name}");
        }
    }

    #[test]
    fn missing_token_field_is_named() {
        let ds = data();
        let mut r = ds.rollouts()[0].clone();
        r.steps[3].token_probs = None;
        let det = Detector::fit(DetectorConfig::new(ScoreMethod::TokenMaxProb), &[]).unwrap();
        match det.score(&r) {
            Err(Error::MissingField { field, step, .. }) => {
                assert_eq!(field, "token_probs");
                assert_eq!(step, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cumsum_accumulates() {
        let ds = data();
        let r = &ds.rollouts()[0];
        let mut cfg = DetectorConfig::new(ScoreMethod::TokenAvgEntropy);
        let plain = Detector::fit(cfg.clone(), &[]).unwrap().score(r).unwrap();
        cfg.cumsum = true;
        let summed = Detector::fit(cfg, &[]).unwrap().score(r).unwrap();
        assert_eq!(summed, baseline::accumulate(&plain));
    }

    #[test]
    fn probe_grid_is_cartesian() {
        let g = probe_grid(
            &DetectorConfig::new(ScoreMethod::Mlp),
            &DEFAULT_PROBE_LEARNING_RATES,
            &DEFAULT_PROBE_L2_WEIGHTS,
        );
        assert_eq!(g.len(), 9);
        assert_eq!(g[1].train.learning_rate, 1e-4);
        assert_eq!(g[1].train.l2_weight, 1e-2);
    }
}
