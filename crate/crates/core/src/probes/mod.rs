//! Learned failure probes over per-step embeddings.
//!
//! * [`MlpProbe`]: a per-step two-layer network whose sigmoid outputs are
//!   summed over time, so `0 < s_t < t` and scores only ever grow.
//! * [`LstmProbe`]: a single-layer LSTM with a linear head and sigmoid, so
//!   `0 < s_t < 1` and `s_t` depends on `e_0..=e_t` only.
//! * [`RndPair`]: random network distillation fit separately on successful and
//!   failed embeddings; the score is the difference of the two errors.
//!
//! Gradients are derived by hand for these fixed architectures and checked
//! against central finite differences in the test suite.

mod adam;
mod lstm;
mod mlp;
mod rnd;
mod train;

use alloc::vec::Vec;

use rand::Rng;

pub use adam::Adam;
pub use lstm::{loss_and_grad_lstm, loss_lstm, lstm_score_trace, LstmProbe};
pub use mlp::{loss_and_grad_mlp, loss_mlp, mlp_score_trace, MlpProbe};
pub use rnd::{rnd_fit, rnd_score, RndNet, RndPair, TwoLayerNet, RND_HIDDEN, RND_OUTPUT};
pub use train::{embed_rollout, train_on_sequences, train_probe, Probe, ProbeKind, TrainedProbe};

use crate::linalg::Matrix;

/// Hidden width used by both probe architectures unless overridden.
pub const DEFAULT_HIDDEN: usize = 256;

/// Flat views over a model's parameter tensors, in a fixed order.
pub trait Parameters: Clone {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Whether tensor `index` is a weight matrix (L2-penalized) rather than a bias.
    fn is_weight(&self, index: usize) -> bool;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `sum ||W||^2` over weight tensors.
    fn l2_norm_sq(&self) -> f64 {
        self.tensors()
            .iter()
            .enumerate()
            .filter(|(i, _)| self.is_weight(*i))
            .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Adds `l2 * sum ||W||^2` to the gradient: `grad += 2 * l2 * W`.
pub(crate) fn add_l2_grad<P: Parameters>(model: &P, grad: &mut P, l2: f64) {
    if l2 == 0.0 {
        return;
    }
    let weights: Vec<bool> = (0..model.tensors().len()).map(|i| model.is_weight(i)).collect();
    for ((g, w), is_w) in grad.tensors_mut().into_iter().zip(model.tensors()).zip(weights) {
        if is_w {
            crate::linalg::axpy(2.0 * l2, w, g);
        }
    }
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn uniform_init<R: Rng>(rng: &mut R, len: usize, fan_in: usize) -> Vec<f64> {
    let bound = 1.0 / libm::sqrt(fan_in.max(1) as f64);
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Per-class loss weights.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassWeights {
    pub success: f64,
    pub failure: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        success: 1.0,
        failure: 1.0,
    };

    /// Inverse class frequency, `N / (2 N_class)`; a missing class gets 1.
    pub fn balanced(n_success: usize, n_failure: usize) -> Self {
        let n = (n_success + n_failure) as f64;
        let w = |c: usize| if c == 0 { 1.0 } else { n / (2.0 * c as f64) };
        Self {
            success: w(n_success),
            failure: w(n_failure),
        }
    }

    #[inline]
    pub fn of(&self, failed: bool) -> f64 {
        if failed {
            self.failure
        } else {
            self.success
        }
    }
}

/// An aggregated embedding sequence (`T x d`) with its rollout label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSequence {
    pub embeddings: Matrix,
    pub failed: bool,
}

/// Weighted-mean normalizer `sum_i w_{y_i}` over a batch.
pub(crate) fn batch_weight(batch: &[&LabeledSequence], weights: ClassWeights) -> f64 {
    batch.iter().map(|s| weights.of(s.failed)).sum()
}

/// Optimizer and schedule settings shared by the probes and RND.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the L2 penalty on weight matrices.
    pub l2_weight: f64,
    pub epochs: usize,
    /// Rollouts per mini-batch (embeddings per mini-batch for RND).
    pub batch_rollouts: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub class_balance: bool,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            l2_weight: 1e-2,
            epochs: 1000,
            batch_rollouts: 512,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            class_balance: true,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.learning_rate > 0.0
            && self.epochs > 0
            && self.batch_rollouts > 0
            && self.hidden > 0
            && self.l2_weight >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(alloc::format!("invalid training config {self:?}")))
        }
    }
}
