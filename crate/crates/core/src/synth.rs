//! Deterministic synthetic rollouts with a known failure zone.
//!
//! Each task has a center `c_task` (unit norm once `separation * sigma >= 1`);
//! success steps scatter around it with isotropic noise. A failed rollout
//! behaves like a success until its onset step, then drifts linearly over
//! about a tenth of the rollout to a failure center at distance
//! `separation * sigma` from `c_task` and stays there. By default the failure
//! center is shared by all tasks: it sits on a direction orthogonal to every
//! task center, so the distance is exact for each task.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};

use crate::linalg::{axpy, dot, norm, Matrix};
use crate::trace::{Dataset, Outcome, RawEmbedding, Rollout, RolloutStep};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SynthConfig {
    pub n_tasks: usize,
    /// Recorded for downstream splitting; the generator treats all tasks alike.
    pub n_unseen_tasks: usize,
    pub rollouts_per_task: usize,
    pub fail_rate: f64,
    pub feat_dim: usize,
    pub rollout_len: usize,
    /// Distance from each task center to its failure center, in noise-sigma units.
    pub separation: f64,
    pub noise_sigma: f64,
    /// Onset is drawn uniformly from `[onset_min, onset_max] * rollout_len`.
    pub onset_min: f64,
    pub onset_max: f64,
    /// Size of the token axis of each raw embedding.
    pub embedding_tokens: usize,
    pub with_tokens: bool,
    /// Tokens per step for `token_probs` / `token_entropies`.
    pub n_tokens: usize,
    /// 0 keeps token statistics independent of failure; `c > 0` scales
    /// post-onset surprisal and entropy by `1 + 2c`.
    pub token_failure_correlation: f64,
    pub with_action_samples: bool,
    pub n_action_samples: usize,
    pub action_horizon: usize,
    pub exec_horizon: usize,
    pub action_dim: usize,
    pub action_noise: f64,
    /// Give each task its own failure center instead of a shared one.
    pub per_task_failure_centers: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_tasks: 7,
            n_unseen_tasks: 2,
            rollouts_per_task: 40,
            fail_rate: 0.5,
            feat_dim: 32,
            rollout_len: 60,
            separation: 6.0,
            noise_sigma: 0.5,
            onset_min: 0.3,
            onset_max: 0.6,
            embedding_tokens: 1,
            with_tokens: true,
            n_tokens: 7,
            token_failure_correlation: 0.0,
            with_action_samples: true,
            n_action_samples: 10,
            action_horizon: 4,
            exec_horizon: 2,
            action_dim: 7,
            action_noise: 0.1,
            per_task_failure_centers: false,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synthetic config: {m}")));
        if self.n_tasks == 0
            || self.rollouts_per_task < 2
            || self.feat_dim == 0
            || self.rollout_len == 0
            || self.embedding_tokens == 0
        {
            return bad("counts must be positive and rollouts_per_task >= 2");
        }
        if self.n_unseen_tasks >= self.n_tasks {
            return bad("n_unseen_tasks must be smaller than n_tasks");
        }
        if !(self.fail_rate > 0.0 && self.fail_rate < 1.0) {
            return bad("fail_rate must lie in (0, 1)");
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return bad("separation must be finite and nonnegative");
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be positive");
        }
        if !(0.0 < self.onset_min && self.onset_min <= self.onset_max && self.onset_max < 1.0) {
            return bad("onset range must satisfy 0 < min <= max < 1");
        }
        if !self.per_task_failure_centers && self.n_tasks >= self.feat_dim {
            return bad("a shared failure center needs feat_dim > n_tasks");
        }
        if self.per_task_failure_centers && self.feat_dim < 2 {
            return bad("per-task failure centers need feat_dim >= 2");
        }
        if !(self.token_failure_correlation >= 0.0) {
            return bad("token_failure_correlation must be nonnegative");
        }
        if self.with_tokens && self.n_tokens == 0 {
            return bad("n_tokens must be positive");
        }
        if self.with_action_samples
            && (self.n_action_samples == 0
                || self.action_dim == 0
                || self.exec_horizon == 0
                || self.exec_horizon > self.action_horizon
                || !(self.action_noise >= 0.0))
        {
            return bad("action settings need K, a >= 1 and 1 <= exec_horizon <= action_horizon");
        }
        Ok(())
    }

    /// Steps over which a failed rollout moves from its task center to the failure center.
    pub fn drift_steps(&self) -> usize {
        (libm::round(0.1 * self.rollout_len as f64) as usize).max(1)
    }

    /// Number of failed rollouts per task.
    pub fn failures_per_task(&self) -> usize {
        let n = self.rollouts_per_task;
        (libm::round(self.fail_rate * n as f64) as usize).clamp(1, n - 1)
    }
}

/// Generator internals, for oracles and timeliness checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub task_ids: Vec<String>,
    pub task_centers: Vec<Vec<f64>>,
    /// One entry when shared, otherwise one per task.
    pub failure_centers: Vec<Vec<f64>>,
    /// Onset step of every failed rollout.
    pub onset_steps: BTreeMap<String, usize>,
    pub rollout_len: usize,
}

impl SynthTruth {
    pub fn failure_center(&self, task: usize) -> &[f64] {
        if self.failure_centers.len() == 1 {
            &self.failure_centers[0]
        } else {
            &self.failure_centers[task]
        }
    }

    /// Onset as a fraction of the rollout length.
    pub fn onset_fraction(&self, rollout_id: &str) -> Option<f64> {
        self.onset_steps
            .get(rollout_id)
            .map(|&s| s as f64 / self.rollout_len as f64)
    }
}

pub fn task_id(i: usize) -> String {
    format!("task{i:02}")
}

pub fn rollout_id(task: usize, r: usize) -> String {
    format!("task{task:02}_r{r:03}")
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn unit_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        let n = norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// A random unit vector orthogonal to every vector in `basis` (which need
/// not be orthonormal).
fn orthogonal_unit<R: Rng>(rng: &mut R, d: usize, basis: &[Vec<f64>]) -> Vec<f64> {
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for b in basis {
        let mut u = b.clone();
        for o in &ortho {
            let c = dot(&u, o);
            axpy(-c, o, &mut u);
        }
        let n = norm(&u);
        if n > 1e-9 {
            u.iter_mut().for_each(|x| *x /= n);
            ortho.push(u);
        }
    }
    loop {
        let mut v = gaussian_vec(rng, d);
        // Two passes keep the projection numerically clean.
        for _ in 0..2 {
            for o in &ortho {
                let c = dot(&v, o);
                axpy(-c, o, &mut v);
            }
        }
        let n = norm(&v);
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

/// Builds task and failure centers at the configured geometry.
fn geometry(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = cfg.feat_dim;
    let dist = cfg.separation * cfg.noise_sigma;
    let radius = dist.min(1.0);
    let tasks: Vec<Vec<f64>> = (0..cfg.n_tasks)
        .map(|_| {
            let mut u = unit_vec(rng, d);
            u.iter_mut().for_each(|x| *x *= radius);
            u
        })
        .collect();
    let fails = if cfg.per_task_failure_centers {
        tasks
            .iter()
            .map(|c| {
                let v = orthogonal_unit(rng, d, core::slice::from_ref(c));
                let mut f = c.clone();
                axpy(dist, &v, &mut f);
                f
            })
            .collect()
    } else {
        // |s v - c_task|^2 = s^2 + radius^2 for every task since v is orthogonal to all of them.
        let v = orthogonal_unit(rng, d, &tasks);
        let s = libm::sqrt((dist * dist - radius * radius).max(0.0));
        vec![v.iter().map(|x| s * x).collect()]
    };
    (tasks, fails)
}

/// Generates the dataset and the generator internals.
pub fn generate(cfg: &SynthConfig) -> Result<(Dataset, SynthTruth)> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (task_centers, failure_centers) = geometry(cfg, &mut master);
    let phases: Vec<Vec<f64>> = (0..cfg.n_tasks)
        .map(|_| {
            (0..cfg.action_dim)
                .map(|_| master.gen_range(0.0..core::f64::consts::TAU))
                .collect()
        })
        .collect();
    let n_fail = cfg.failures_per_task();
    let labels: Vec<Vec<bool>> = (0..cfg.n_tasks)
        .map(|_| {
            let mut l: Vec<bool> = (0..cfg.rollouts_per_task).map(|r| r < n_fail).collect();
            l.shuffle(&mut master);
            l
        })
        .collect();

    let truth_fail = |task: usize| -> &[f64] {
        if failure_centers.len() == 1 {
            &failure_centers[0]
        } else {
            &failure_centers[task]
        }
    };
    let mut rollouts = Vec::with_capacity(cfg.n_tasks * cfg.rollouts_per_task);
    let mut onset_steps = BTreeMap::new();
    for task in 0..cfg.n_tasks {
        for r in 0..cfg.rollouts_per_task {
            let index = (task * cfg.rollouts_per_task + r) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(index + 1);
            let failed = labels[task][r];
            let id = rollout_id(task, r);
            let onset = if failed {
                let u = rng.gen_range(cfg.onset_min..=cfg.onset_max);
                let step = (libm::floor(u * cfg.rollout_len as f64) as usize).min(cfg.rollout_len - 1);
                onset_steps.insert(id.clone(), step);
                Some(step)
            } else {
                None
            };
            let ctx = RolloutCtx {
                cfg,
                center: &task_centers[task],
                fail_center: truth_fail(task),
                phases: &phases[task],
                onset,
            };
            rollouts.push(Rollout {
                rollout_id: id,
                task_id: task_id(task),
                label: if failed { Outcome::Failure } else { Outcome::Success },
                replan_stride: cfg.exec_horizon,
                steps: ctx.steps(&mut rng)?,
            });
        }
    }
    let truth = SynthTruth {
        task_ids: (0..cfg.n_tasks).map(task_id).collect(),
        task_centers: task_centers.clone(),
        failure_centers: failure_centers.clone(),
        onset_steps,
        rollout_len: cfg.rollout_len,
    };
    Ok((Dataset::new(rollouts)?, truth))
}

struct RolloutCtx<'a> {
    cfg: &'a SynthConfig,
    center: &'a [f64],
    fail_center: &'a [f64],
    phases: &'a [f64],
    onset: Option<usize>,
}

impl RolloutCtx<'_> {
    /// Fraction of the way to the failure center at step `t`.
    fn drift(&self, t: usize) -> f64 {
        match self.onset {
            Some(o) if t >= o => ((t - o + 1) as f64 / self.cfg.drift_steps() as f64).min(1.0),
            _ => 0.0,
        }
    }

    fn post_onset(&self, t: usize) -> bool {
        self.onset.is_some_and(|o| t >= o)
    }

    fn steps(&self, rng: &mut ChaCha8Rng) -> Result<Vec<RolloutStep>> {
        let cfg = self.cfg;
        let d = cfg.feat_dim;
        let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidArgument(format!("{e}")))?;
        let surprisal = Exp::new(2.0).expect("rate 2 is valid");
        let mut steps = Vec::with_capacity(cfg.rollout_len);
        let mut mean = vec![0.0; d];
        for t in 0..cfg.rollout_len {
            let lam = self.drift(t);
            for j in 0..d {
                mean[j] = self.center[j] + lam * (self.fail_center[j] - self.center[j]);
            }
            let data: Vec<f64> = (0..cfg.embedding_tokens)
                .flat_map(|_| mean.iter().map(|m| m + noise.sample(rng)).collect::<Vec<_>>())
                .collect();
            let mut step = RolloutStep::new(RawEmbedding::token(cfg.embedding_tokens, d, data)?);

            if cfg.with_tokens {
                let scale = if self.post_onset(t) {
                    1.0 + 2.0 * cfg.token_failure_correlation
                } else {
                    1.0
                };
                let probs = (0..cfg.n_tokens)
                    .map(|_| libm::exp(-scale * surprisal.sample(rng)))
                    .collect();
                let ents = (0..cfg.n_tokens).map(|_| scale * rng.gen_range(0.0..2.0)).collect();
                step.token_probs = Some(probs);
                step.token_entropies = Some(ents);
            }

            if cfg.with_action_samples {
                let inflate = if self.post_onset(t) { 2.0 } else { 1.0 };
                let an = Normal::new(0.0, cfg.action_noise * inflate)
                    .map_err(|e| Error::InvalidArgument(format!("{e}")))?;
                let (h, a) = (cfg.action_horizon, cfg.action_dim);
                let samples = (0..cfg.n_action_samples)
                    .map(|_| {
                        let data = (0..h)
                            .flat_map(|hh| {
                                let tau = (t * cfg.exec_horizon + hh) as f64;
                                (0..a)
                                    .map(|j| {
                                        let omega = 0.2 + 0.05 * j as f64;
                                        libm::sin(omega * tau + self.phases[j]) + an.sample(rng)
                                    })
                                    .collect::<Vec<_>>()
                            })
                            .collect();
                        Matrix::new(h, a, data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                step.action_chunk = Some(samples[0].clone());
                step.action_samples = Some(samples);
            }
            steps.push(step);
        }
        Ok(steps)
    }
}
