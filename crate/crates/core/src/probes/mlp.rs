use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{add_l2_grad, batch_weight, uniform_init, ClassWeights, LabeledSequence, Parameters};
use crate::linalg::{axpy, dot, sigmoid, Matrix};
use crate::trace::ScoreTrace;
use crate::{Error, Result};

pub const MLP_TAG: &str = "mlp_score_trace";

/// Two-layer perceptron `g(e) = w2 . tanh(W1 e + b1) + b2` applied per step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpProbe {
    pub input_dim: usize,
    pub hidden: usize,
    /// `hidden x input_dim`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Parameters for MlpProbe {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    fn is_weight(&self, index: usize) -> bool {
        matches!(index, 0 | 2)
    }
}

impl MlpProbe {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            input_dim,
            hidden,
            w1: uniform_init(rng, hidden * input_dim, input_dim),
            b1: uniform_init(rng, hidden, input_dim),
            w2: uniform_init(rng, hidden, hidden),
            b2: uniform_init(rng, 1, hidden),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: vec![0.0],
        }
    }

    fn check_input(&self, embeddings: &Matrix) -> Result<()> {
        if embeddings.cols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: embeddings.cols(),
            });
        }
        if embeddings.is_empty() {
            return Err(Error::Empty("embedding sequence"));
        }
        Ok(())
    }

    /// Writes `tanh(W1 e + b1)` into `h` and returns the logit `g(e)`.
    fn forward_step(&self, e: &[f64], h: &mut [f64]) -> f64 {
        let d = self.input_dim;
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = libm::tanh(dot(&self.w1[j * d..(j + 1) * d], e) + self.b1[j]);
        }
        dot(&self.w2, h) + self.b2[0]
    }

    /// Per-step logits `g(e_t)`.
    pub fn logits(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        self.check_input(embeddings)?;
        let mut h = vec![0.0; self.hidden];
        Ok(embeddings.iter_rows().map(|e| self.forward_step(e, &mut h)).collect())
    }

    /// `s_t = sum_{tau <= t} sigmoid(g(e_tau))`.
    pub fn scores(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        let mut acc = 0.0;
        Ok(self
            .logits(embeddings)?
            .into_iter()
            .map(|g| {
                acc += sigmoid(g);
                acc
            })
            .collect())
    }
}

pub fn mlp_score_trace(probe: &MlpProbe, embeddings: &Matrix, rollout_id: &str) -> Result<ScoreTrace> {
    Ok(ScoreTrace::new(rollout_id, probe.scores(embeddings)?, MLP_TAG))
}

/// Data term for one rollout: `sum_t (t - s_t)` if failed else `sum_t s_t`,
/// with `t` counting steps from 1.
fn rollout_data_term(scores: &[f64], failed: bool) -> f64 {
    scores
        .iter()
        .enumerate()
        .map(|(j, s)| if failed { (j + 1) as f64 - s } else { *s })
        .sum()
}

/// Class-weighted mean data term over the batch plus `l2 * sum ||W||^2`.
pub fn loss_mlp(probe: &MlpProbe, batch: &[&LabeledSequence], weights: ClassWeights, l2: f64) -> Result<f64> {
    let wsum = batch_weight(batch, weights);
    let mut data = 0.0;
    for seq in batch {
        let s = probe.scores(&seq.embeddings)?;
        data += weights.of(seq.failed) * rollout_data_term(&s, seq.failed);
    }
    let data = if wsum > 0.0 { data / wsum } else { 0.0 };
    Ok(data + l2 * probe.l2_norm_sq())
}

/// Loss and its exact gradient.
pub fn loss_and_grad_mlp(
    probe: &MlpProbe,
    batch: &[&LabeledSequence],
    weights: ClassWeights,
    l2: f64,
) -> Result<(f64, MlpProbe)> {
    let wsum = batch_weight(batch, weights);
    let norm = if wsum > 0.0 { 1.0 / wsum } else { 0.0 };
    let (d, hdim) = (probe.input_dim, probe.hidden);
    let mut grad = probe.zeros_like();
    let mut data = 0.0;
    let mut h = vec![0.0; hdim];
    let mut dz = vec![0.0; hdim];
    for seq in batch {
        probe.check_input(&seq.embeddings)?;
        let t_len = seq.embeddings.rows();
        let w = weights.of(seq.failed) * norm;
        let sign = if seq.failed { -1.0 } else { 1.0 };
        let mut s = 0.0;
        let mut term = 0.0;
        for (tau, e) in seq.embeddings.iter_rows().enumerate() {
            let g = probe.forward_step(e, &mut h);
            let p = sigmoid(g);
            s += p;
            term += if seq.failed { (tau + 1) as f64 - s } else { s };
            // p_tau contributes to s_t for every t >= tau.
            let dp = w * sign * (t_len - tau) as f64;
            let dg = dp * p * (1.0 - p);
            axpy(dg, &h, &mut grad.w2);
            grad.b2[0] += dg;
            for j in 0..hdim {
                dz[j] = dg * probe.w2[j] * (1.0 - h[j] * h[j]);
            }
            for (j, &dzj) in dz.iter().enumerate() {
                if dzj != 0.0 {
                    axpy(dzj, e, &mut grad.w1[j * d..(j + 1) * d]);
                }
            }
            axpy(1.0, &dz, &mut grad.b1);
        }
        data += w * term;
    }
    add_l2_grad(probe, &mut grad, l2);
    Ok((data + l2 * probe.l2_norm_sq(), grad))
}
