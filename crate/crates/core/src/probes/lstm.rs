use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{add_l2_grad, batch_weight, uniform_init, ClassWeights, LabeledSequence, Parameters};
use crate::linalg::{axpy, dot, sigmoid, softplus, Matrix};
use crate::trace::ScoreTrace;
use crate::{Error, Result};

pub const LSTM_TAG: &str = "lstm_score_trace";

/// Single-layer LSTM with a linear head: `s_t = sigmoid(v . h_t + c)`.
///
/// Gate pre-activations are `W [x_t; h_{t-1}] + b` with rows stacked as
/// input, forget, cell and output gates, `hidden` rows each.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LstmProbe {
    pub input_dim: usize,
    pub hidden: usize,
    /// `4 hidden x (input_dim + hidden)`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub head_w: Vec<f64>,
    pub head_b: Vec<f64>,
}

impl Parameters for LstmProbe {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![&self.w, &self.b, &self.head_w, &self.head_b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w, &mut self.b, &mut self.head_w, &mut self.head_b]
    }

    fn is_weight(&self, index: usize) -> bool {
        matches!(index, 0 | 2)
    }
}

/// Activations kept for backpropagation through time.
struct Tape {
    /// `[x_t; h_{t-1}]` per step.
    u: Vec<f64>,
    /// Activated gates `i, f, g, o` per step.
    gates: Vec<f64>,
    /// Cell state per step.
    c: Vec<f64>,
    h: Vec<f64>,
    logits: Vec<f64>,
}

impl LstmProbe {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden;
        let mut b = uniform_init(rng, 4 * hidden, fan_in);
        let w = uniform_init(rng, 4 * hidden * fan_in, fan_in);
        b[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        Self {
            input_dim,
            hidden,
            w,
            b,
            head_w: uniform_init(rng, hidden, hidden),
            head_b: uniform_init(rng, 1, hidden),
        }
    }

    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w: vec![0.0; 4 * hidden * (input_dim + hidden)],
            b: vec![0.0; 4 * hidden],
            head_w: vec![0.0; hidden],
            head_b: vec![0.0],
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

    fn run(&self, embeddings: &Matrix) -> Tape {
        let (d, hd) = (self.input_dim, self.hidden);
        let width = d + hd;
        let t_len = embeddings.rows();
        let mut tape = Tape {
            u: vec![0.0; t_len * width],
            gates: vec![0.0; t_len * 4 * hd],
            c: vec![0.0; t_len * hd],
            h: vec![0.0; t_len * hd],
            logits: vec![0.0; t_len],
        };
        let mut h_prev = vec![0.0; hd];
        let mut c_prev = vec![0.0; hd];
        for (t, x) in embeddings.iter_rows().enumerate() {
            let u = &mut tape.u[t * width..(t + 1) * width];
            u[..d].copy_from_slice(x);
            u[d..].copy_from_slice(&h_prev);
            let gates = &mut tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
            for (r, a) in gates.iter_mut().enumerate() {
                let pre = dot(&self.w[r * width..(r + 1) * width], u) + self.b[r];
                *a = if (2 * hd..3 * hd).contains(&r) {
                    libm::tanh(pre)
                } else {
                    sigmoid(pre)
                };
            }
            let c = &mut tape.c[t * hd..(t + 1) * hd];
            let h = &mut tape.h[t * hd..(t + 1) * hd];
            for j in 0..hd {
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                c[j] = f * c_prev[j] + i * g;
                h[j] = o * libm::tanh(c[j]);
            }
            tape.logits[t] = dot(&self.head_w, h) + self.head_b[0];
            h_prev.copy_from_slice(h);
            c_prev.copy_from_slice(c);
        }
        tape
    }

    /// Per-step head logits.
    pub fn logits(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        self.check_input(embeddings)?;
        Ok(self.run(embeddings).logits)
    }

    /// `s_t = sigmoid(logit_t)`.
    pub fn scores(&self, embeddings: &Matrix) -> Result<Vec<f64>> {
        Ok(self.logits(embeddings)?.into_iter().map(sigmoid).collect())
    }
}

pub fn lstm_score_trace(probe: &LstmProbe, embeddings: &Matrix, rollout_id: &str) -> Result<ScoreTrace> {
    Ok(ScoreTrace::new(rollout_id, probe.scores(embeddings)?, LSTM_TAG))
}

/// Binary cross-entropy `-[y ln s + (1 - y) ln(1 - s)]` from the logit.
#[inline]
fn bce_from_logit(logit: f64, failed: bool) -> f64 {
    if failed {
        softplus(-logit)
    } else {
        softplus(logit)
    }
}

/// Class-weighted mean over rollouts of the per-step BCE summed over time,
/// plus `l2 * sum ||W||^2`.
pub fn loss_lstm(probe: &LstmProbe, batch: &[&LabeledSequence], weights: ClassWeights, l2: f64) -> Result<f64> {
    let wsum = batch_weight(batch, weights);
    let mut data = 0.0;
    for seq in batch {
        let bce: f64 = probe
            .logits(&seq.embeddings)?
            .into_iter()
            .map(|l| bce_from_logit(l, seq.failed))
            .sum();
        data += weights.of(seq.failed) * bce;
    }
    let data = if wsum > 0.0 { data / wsum } else { 0.0 };
    Ok(data + l2 * probe.l2_norm_sq())
}

/// Loss and its exact gradient by backpropagation through time.
pub fn loss_and_grad_lstm(
    probe: &LstmProbe,
    batch: &[&LabeledSequence],
    weights: ClassWeights,
    l2: f64,
) -> Result<(f64, LstmProbe)> {
    let wsum = batch_weight(batch, weights);
    let norm = if wsum > 0.0 { 1.0 / wsum } else { 0.0 };
    let (d, hd) = (probe.input_dim, probe.hidden);
    let width = d + hd;
    let mut grad = probe.zeros_like();
    let mut data = 0.0;

    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; 4 * hd];
    let mut du = vec![0.0; width];
    for seq in batch {
        probe.check_input(&seq.embeddings)?;
        let tape = probe.run(&seq.embeddings);
        let w = weights.of(seq.failed) * norm;
        let y = if seq.failed { 1.0 } else { 0.0 };
        data += w * tape.logits.iter().map(|&l| bce_from_logit(l, seq.failed)).sum::<f64>();

        dh_next.iter_mut().for_each(|v| *v = 0.0);
        dc_next.iter_mut().for_each(|v| *v = 0.0);
        for t in (0..seq.embeddings.rows()).rev() {
            let h = &tape.h[t * hd..(t + 1) * hd];
            let c = &tape.c[t * hd..(t + 1) * hd];
            let gates = &tape.gates[t * 4 * hd..(t + 1) * 4 * hd];
            let u = &tape.u[t * width..(t + 1) * width];

            let dlogit = w * (sigmoid(tape.logits[t]) - y);
            axpy(dlogit, h, &mut grad.head_w);
            grad.head_b[0] += dlogit;

            for j in 0..hd {
                let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                let c_prev = if t > 0 { tape.c[(t - 1) * hd + j] } else { 0.0 };
                let tc = libm::tanh(c[j]);
                let dh = dlogit * probe.head_w[j] + dh_next[j];
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                da[j] = dc * g * i * (1.0 - i);
                da[hd + j] = dc * c_prev * f * (1.0 - f);
                da[2 * hd + j] = dc * i * (1.0 - g * g);
                da[3 * hd + j] = dh * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }

            du.iter_mut().for_each(|v| *v = 0.0);
            for (r, &dar) in da.iter().enumerate() {
                if dar != 0.0 {
                    axpy(dar, u, &mut grad.w[r * width..(r + 1) * width]);
                    axpy(dar, &probe.w[r * width..(r + 1) * width], &mut du);
                }
            }
            axpy(1.0, &da, &mut grad.b);
            dh_next.copy_from_slice(&du[d..]);
        }
    }
    add_l2_grad(probe, &mut grad, l2);
    Ok((data + l2 * probe.l2_norm_sq(), grad))
}
