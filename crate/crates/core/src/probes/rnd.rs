use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{add_l2_grad, uniform_init, Adam, Parameters, TrainConfig};
use crate::baseline::ReferenceBank;
use crate::linalg::{axpy, dot, Matrix};
use crate::{Error, Result};

pub const RND_HIDDEN: usize = 256;
pub const RND_OUTPUT: usize = 128;

/// `W2 tanh(W1 x + b1) + b2`
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TwoLayerNet {
    pub input_dim: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Parameters for TwoLayerNet {
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

impl TwoLayerNet {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, output: usize, rng: &mut R) -> Self {
        Self {
            input_dim,
            hidden,
            output,
            w1: uniform_init(rng, hidden * input_dim, input_dim),
            b1: uniform_init(rng, hidden, input_dim),
            w2: uniform_init(rng, output * hidden, hidden),
            b2: uniform_init(rng, output, hidden),
        }
    }

    fn forward_into(&self, x: &[f64], h: &mut [f64], out: &mut [f64]) {
        let (d, hd) = (self.input_dim, self.hidden);
        for (j, hj) in h.iter_mut().enumerate() {
            *hj = libm::tanh(dot(&self.w1[j * d..(j + 1) * d], x) + self.b1[j]);
        }
        for (k, ok) in out.iter_mut().enumerate() {
            *ok = dot(&self.w2[k * hd..(k + 1) * hd], h) + self.b2[k];
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        let mut out = vec![0.0; self.output];
        self.forward_into(x, &mut h, &mut out);
        out
    }
}

/// A frozen random target and a predictor trained to imitate it.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RndNet {
    pub target: TwoLayerNet,
    pub predictor: TwoLayerNet,
}

impl RndNet {
    pub fn new<R: Rng>(input_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let target = TwoLayerNet::new(input_dim, hidden, RND_OUTPUT, rng);
        let predictor = TwoLayerNet::new(input_dim, hidden, RND_OUTPUT, rng);
        Self { target, predictor }
    }

    /// Mean squared predictor error over the output units.
    pub fn error(&self, x: &[f64]) -> f64 {
        let t = self.target.forward(x);
        let p = self.predictor.forward(x);
        t.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / t.len() as f64
    }

    /// Mean error over `batch` plus the predictor's L2 term, with gradient
    /// for the predictor.
    fn loss_and_grad(&self, batch: &[&[f64]], l2: f64) -> (f64, TwoLayerNet) {
        let net = &self.predictor;
        let (d, hd, od) = (net.input_dim, net.hidden, net.output);
        let mut grad = net.zeros_like();
        let mut h = vec![0.0; hd];
        let mut th = vec![0.0; hd];
        let mut out = vec![0.0; od];
        let mut target = vec![0.0; od];
        let mut dh = vec![0.0; hd];
        let scale = 1.0 / (batch.len() as f64 * od as f64);
        let mut loss = 0.0;
        for x in batch {
            self.target.forward_into(x, &mut th, &mut target);
            net.forward_into(x, &mut h, &mut out);
            dh.iter_mut().for_each(|v| *v = 0.0);
            for k in 0..od {
                let diff = out[k] - target[k];
                loss += diff * diff * scale;
                let dout = 2.0 * diff * scale;
                axpy(dout, &h, &mut grad.w2[k * hd..(k + 1) * hd]);
                grad.b2[k] += dout;
                axpy(dout, &net.w2[k * hd..(k + 1) * hd], &mut dh);
            }
            for j in 0..hd {
                let dz = dh[j] * (1.0 - h[j] * h[j]);
                axpy(dz, x, &mut grad.w1[j * d..(j + 1) * d]);
                grad.b1[j] += dz;
            }
        }
        add_l2_grad(net, &mut grad, l2);
        (loss + l2 * net.l2_norm_sq(), grad)
    }

    fn fit(&mut self, set: &Matrix, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut adam = Adam::from_config(cfg);
        let mut order: Vec<usize> = (0..set.rows()).collect();
        for epoch in 0..cfg.epochs {
            order.shuffle(rng);
            for (b, chunk) in order.chunks(cfg.batch_rollouts).enumerate() {
                let batch: Vec<&[f64]> = chunk.iter().map(|&i| set.row(i)).collect();
                let (loss, grad) = self.loss_and_grad(&batch, cfg.l2_weight);
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b, value: loss });
                }
                adam.step(&mut self.predictor, &grad);
            }
        }
        Ok(())
    }
}

/// One RND model per reference set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RndPair {
    pub succ: RndNet,
    pub fail: RndNet,
}

impl RndPair {
    pub fn input_dim(&self) -> usize {
        self.succ.target.input_dim
    }
}

/// Fits RND on each side of the bank. Both sides start from the same seeded
/// target and predictor, so identical banks give identical models.
pub fn rnd_fit(bank: &ReferenceBank, cfg: &TrainConfig, seed: u64) -> Result<RndPair> {
    cfg.validate()?;
    let fit_side = |set: &Matrix| -> Result<RndNet> {
        if set.is_empty() {
            return Err(Error::Empty("RND reference set"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = RndNet::new(set.cols(), cfg.hidden, &mut rng);
        net.fit(set, cfg, &mut rng)?;
        Ok(net)
    };
    Ok(RndPair {
        succ: fit_side(bank.succ())?,
        fail: fit_side(bank.fail())?,
    })
}

/// `err_succ(e) - err_fail(e)`
pub fn rnd_score(pair: &RndPair, e: &[f64]) -> Result<f64> {
    if e.len() != pair.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: pair.input_dim(),
            got: e.len(),
        });
    }
    Ok(pair.succ.error(e) - pair.fail.error(e))
}
