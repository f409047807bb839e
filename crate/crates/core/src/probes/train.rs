use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lstm::LSTM_TAG;
use super::mlp::MLP_TAG;
use super::{
    loss_and_grad_lstm, loss_and_grad_mlp, Adam, ClassWeights, LabeledSequence, LstmProbe, MlpProbe, Parameters,
    TrainConfig,
};
use crate::aggregation::AggregationSpec;
use crate::linalg::Matrix;
use crate::trace::{Rollout, ScoreTrace};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ProbeKind {
    Mlp,
    Lstm,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "arch", rename_all = "snake_case"))]
pub enum Probe {
    Mlp(MlpProbe),
    Lstm(LstmProbe),
}

impl Probe {
    pub fn kind(&self) -> ProbeKind {
        match self {
            Probe::Mlp(_) => ProbeKind::Mlp,
            Probe::Lstm(_) => ProbeKind::Lstm,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Probe::Mlp(p) => p.input_dim,
            Probe::Lstm(p) => p.input_dim,
        }
    }

    pub fn scores(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        match self {
            Probe::Mlp(p) => p.scores(embeddings),
            Probe::Lstm(p) => p.scores(embeddings),
        }
    }

    pub fn score_trace(&self, embeddings: &Matrix, rollout_id: &str) -> Result<ScoreTrace> {
        let tag = match self {
            Probe::Mlp(_) => MLP_TAG,
            Probe::Lstm(_) => LSTM_TAG,
        };
        Ok(ScoreTrace::new(rollout_id, self.scores(embeddings)?, tag))
    }

    pub fn loss(&self, batch: &[&LabeledSequence], weights: ClassWeights, l2: f64) -> Result<f64> {
        match self {
            Probe::Mlp(p) => super::loss_mlp(p, batch, weights, l2),
            Probe::Lstm(p) => super::loss_lstm(p, batch, weights, l2),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedProbe {
    pub probe: Probe,
    /// Mean mini-batch loss per epoch, measured before each update.
    pub loss_curve: Vec<f64>,
    pub class_weights: ClassWeights,
}

/// Aggregates every step of `rollout` into a `T x d` embedding matrix.
pub fn embed_rollout(rollout: &Rollout, agg: &AggregationSpec) -> Result<Matrix> {
    let rows = rollout
        .steps
        .iter()
        .map(|s| agg.apply(&s.embedding))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Aggregates the rollouts' embeddings and trains a probe on them.
pub fn train_probe(train: &[&Rollout], kind: ProbeKind, cfg: &TrainConfig, agg: &AggregationSpec) -> Result<TrainedProbe> {
    let seqs = train
        .iter()
        .map(|r| {
            Ok(LabeledSequence {
                embeddings: embed_rollout(r, agg)?,
                failed: r.label.is_failure(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    train_on_sequences(&seqs, kind, cfg)
}

/// Adam on the analytic gradient for `cfg.epochs` passes over shuffled
/// mini-batches of `cfg.batch_rollouts` sequences. Bit-reproducible per seed.
pub fn train_on_sequences(seqs: &[LabeledSequence], kind: ProbeKind, cfg: &TrainConfig) -> Result<TrainedProbe> {
    cfg.validate()?;
    let n_fail = seqs.iter().filter(|s| s.failed).count();
    let n_succ = seqs.len() - n_fail;
    if n_fail == 0 || n_succ == 0 {
        return Err(Error::SingleClass("probe training set"));
    }
    let dim = seqs[0].embeddings.cols();
    if let Some(s) = seqs.iter().find(|s| s.embeddings.cols() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: s.embeddings.cols(),
        });
    }
    let weights = if cfg.class_balance {
        ClassWeights::balanced(n_succ, n_fail)
    } else {
        ClassWeights::UNIFORM
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (probe, loss_curve) = match kind {
        ProbeKind::Mlp => {
            let init = MlpProbe::new(dim, cfg.hidden, &mut rng);
            let (p, c) = fit(init, seqs, cfg, weights, &mut rng, loss_and_grad_mlp)?;
            (Probe::Mlp(p), c)
        }
        ProbeKind::Lstm => {
            let init = LstmProbe::new(dim, cfg.hidden, &mut rng);
            let (p, c) = fit(init, seqs, cfg, weights, &mut rng, loss_and_grad_lstm)?;
            (Probe::Lstm(p), c)
        }
    };
    Ok(TrainedProbe {
        probe,
        loss_curve,
        class_weights: weights,
    })
}

type LossGrad<P> = fn(&P, &[&LabeledSequence], ClassWeights, f64) -> Result<(f64, P)>;

fn fit<P: Parameters>(
    mut model: P,
    seqs: &[LabeledSequence],
    cfg: &TrainConfig,
    weights: ClassWeights,
    rng: &mut ChaCha8Rng,
    loss_grad: LossGrad<P>,
) -> Result<(P, Vec<f64>)> {
    let mut adam = Adam::from_config(cfg);
    let mut order: Vec<usize> = (0..seqs.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(cfg.batch_rollouts).enumerate() {
            let batch: Vec<&LabeledSequence> = chunk.iter().map(|&i| &seqs[i]).collect();
            let (loss, grad) = loss_grad(&model, &batch, weights, cfg.l2_weight)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: loss,
                });
            }
            adam.step(&mut model, &grad);
            total += loss;
            batches += 1;
        }
        curve.push(total / batches as f64);
    }
    Ok((model, curve))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn toy(n: usize) -> Vec<LabeledSequence> {
        (0..n)
            .map(|i| {
                let failed = i % 2 == 1;
                let base = if failed { 1.0 } else { -1.0 };
                let data = (0..5 * 2).map(|j| base + 0.1 * ((i + j) % 3) as f64).collect();
                LabeledSequence {
                    embeddings: Matrix::new(5, 2, data).unwrap(),
                    failed,
                }
            })
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            batch_rollouts: 4,
            hidden: 8,
            learning_rate: 1e-2,
            l2_weight: 1e-3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_class_is_rejected() {
        let seqs: Vec<_> = toy(6).into_iter().filter(|s| s.failed).collect();
        assert!(matches!(
            train_on_sequences(&seqs, ProbeKind::Mlp, &cfg()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn reproducible_for_fixed_seed() {
        let seqs = toy(10);
        for kind in [ProbeKind::Mlp, ProbeKind::Lstm] {
            let a = train_on_sequences(&seqs, kind, &cfg()).unwrap();
            let b = train_on_sequences(&seqs, kind, &cfg()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let seqs = toy(10);
        for kind in [ProbeKind::Mlp, ProbeKind::Lstm] {
            let t = train_on_sequences(&seqs, kind, &cfg()).unwrap();
            assert!(t.loss_curve.last().unwrap() < &t.loss_curve[0]);
        }
    }

    #[test]
    fn diverging_training_reports_non_finite_loss() {
        let mut seqs = toy(4);
        seqs[0].embeddings = Matrix::new(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            train_on_sequences(&seqs, ProbeKind::Mlp, &cfg()),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
