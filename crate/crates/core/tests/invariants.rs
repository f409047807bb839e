use std::collections::BTreeSet;

use failprobe_core::baseline::{accumulate, cluster_entropy, mmd_squared};
use failprobe_core::conformal::{conformal_quantile, fit_band, BandConfig, ConformalBand};
use failprobe_core::eval::{max_so_far, roc_auc};
use failprobe_core::probes::{lstm_score_trace, mlp_score_trace, LstmProbe, MlpProbe};
use failprobe_core::trace::{
    split_dataset, truncate_to_min_length, Dataset, Outcome, RawEmbedding, Rollout, RolloutStep, ScoreTrace, Split,
};
use failprobe_core::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |v| Matrix::new(rows, cols, v).unwrap())
}

fn points(k: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), k)
}

/// Tasks with 2..6 rollouts each, lengths 1..8, embedding dim 2.
fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(prop::collection::vec((1usize..8, any::<bool>()), 2..6), 1..5).prop_map(|tasks| {
        let mut rollouts = Vec::new();
        for (ti, rs) in tasks.iter().enumerate() {
            for (ri, &(len, failed)) in rs.iter().enumerate() {
                let steps = (0..len)
                    .map(|t| RolloutStep::new(RawEmbedding::token(1, 2, vec![t as f64, ri as f64]).unwrap()))
                    .collect();
                rollouts.push(Rollout {
                    rollout_id: format!("t{ti}_r{ri}"),
                    task_id: format!("t{ti}"),
                    label: if failed { Outcome::Failure } else { Outcome::Success },
                    replan_stride: 1,
                    steps,
                });
            }
        }
        Dataset::new(rollouts).unwrap()
    })
}

proptest! {
    #[test]
    fn mlp_trace_strictly_increases_and_stays_below_step_count(
        seed in any::<u64>(), d in 1usize..6, t in 1usize..30,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = MlpProbe::new(d, 8, &mut rng);
        let emb = Matrix::new(t, d, (0..t * d).map(|i| ((i * 37 % 17) as f64 - 8.0) / 4.0).collect()).unwrap();
        let s = mlp_score_trace(&probe, &emb, "r").unwrap().values;
        for (i, v) in s.iter().enumerate() {
            prop_assert!(*v > 0.0 && *v < (i + 1) as f64);
        }
        prop_assert!(s.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn lstm_is_causal_and_bounded(seed in any::<u64>(), emb in matrix(10, 3), cut in 0usize..9, bump in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probe = LstmProbe::new(3, 5, &mut rng);
        let a = lstm_score_trace(&probe, &emb, "r").unwrap().values;
        let mut perturbed = emb.clone();
        for t in cut + 1..10 {
            perturbed.row_mut(t).iter_mut().for_each(|v| *v += bump);
        }
        let b = lstm_score_trace(&probe, &perturbed, "r").unwrap().values;
        prop_assert_eq!(&a[..=cut], &b[..=cut]);
        prop_assert!(a.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn max_so_far_is_idempotent_and_nondecreasing(values in prop::collection::vec(-10.0f64..10.0, 1..40)) {
        let tr = ScoreTrace::new("r", values.clone(), "x");
        let once = max_so_far(&tr);
        prop_assert_eq!(&max_so_far(&once), &once);
        prop_assert!(once.values.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(once.values.iter().zip(&values).all(|(m, v)| m >= v));
    }

    #[test]
    fn accumulate_of_nonnegative_steps_is_nondecreasing(values in prop::collection::vec(0.0f64..3.0, 1..40)) {
        let acc = accumulate(&ScoreTrace::new("r", values.clone(), "x")).values;
        prop_assert!(acc.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!((acc[acc.len() - 1] - values.iter().sum::<f64>()).abs() < 1e-9);
    }

    #[test]
    fn mmd_is_a_nonnegative_symmetric_discrepancy(x in points(4, 3), y in points(3, 3), h in 0.3f64..3.0) {
        let xy = mmd_squared(&x, &y, h).unwrap();
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - mmd_squared(&y, &x, h).unwrap()).abs() < 1e-12);
        prop_assert!(mmd_squared(&x, &x, h).unwrap().abs() < 1e-12);
    }

    #[test]
    fn cluster_entropy_lies_between_zero_and_log_k(k in 1usize..12, thr in 0.01f64..5.0, seed in any::<u64>()) {
        let data: Vec<f64> = (0..k * 2).map(|i| ((seed.wrapping_add(i as u64 * 7919) % 1000) as f64) / 250.0).collect();
        let h = cluster_entropy(&Matrix::new(k, 2, data).unwrap(), thr).unwrap();
        prop_assert!(h >= 0.0 && h <= (k as f64).ln() + 1e-12);
    }

    #[test]
    fn split_is_a_partition_with_whole_unseen_tasks(ds in dataset(), frac in 0.2f64..0.8, seed in any::<u64>()) {
        let n_tasks = ds.task_index().len();
        let n_unseen = n_tasks / 2;
        let sp = split_dataset(&ds, n_unseen, frac, seed).unwrap();
        let all: BTreeSet<String> = ds.rollouts().iter().map(|r| r.rollout_id.clone()).collect();
        let parts = [Split::Train, Split::EvalSeen, Split::EvalUnseen].map(|s| sp.ids(s).clone());
        prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), all.len());
        let union: BTreeSet<String> = parts.iter().flatten().cloned().collect();
        prop_assert_eq!(&union, &all);
        prop_assert_eq!(sp.unseen_task_ids.len(), n_unseen);
        for r in ds.rollouts() {
            let unseen = sp.unseen_task_ids.contains(&r.task_id);
            prop_assert_eq!(unseen, sp.eval_unseen_ids.contains(&r.rollout_id));
        }
        prop_assert_eq!(split_dataset(&ds, n_unseen, frac, seed).unwrap(), sp);
    }

    #[test]
    fn truncation_is_idempotent_and_per_task(ds in dataset()) {
        let once = truncate_to_min_length(&ds);
        prop_assert_eq!(&truncate_to_min_length(&once), &once);
        for (_, ids) in once.task_index() {
            let lens: BTreeSet<usize> = ids.iter().map(|id| once.get(id).unwrap().len()).collect();
            prop_assert_eq!(lens.len(), 1);
        }
    }

    #[test]
    fn roc_auc_flips_under_negation(
        scores in prop::collection::vec(0u8..6, 4..40), labels in prop::collection::vec(any::<bool>(), 4..40),
    ) {
        let n = scores.len().min(labels.len());
        let (s, l) = (&scores[..n], &labels[..n]);
        prop_assume!(l.iter().any(|b| *b) && l.iter().any(|b| !*b));
        let s: Vec<f64> = s.iter().map(|v| *v as f64).collect();
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        let a = roc_auc(&s, l).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a + roc_auc(&neg, l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn band_rises_with_q_and_quantile_falls_with_alpha(
        mu in prop::collection::vec(-2.0f64..2.0, 5), m in prop::collection::vec(0.1f64..2.0, 5),
        q in 0.0f64..3.0, dq in 0.0f64..2.0, scores in prop::collection::vec(-3.0f64..3.0, 1..50),
        a1 in 0.01f64..0.5, da in 0.0f64..0.4,
    ) {
        let lo = ConformalBand::from_parts(mu.clone(), m.clone(), q, 0.1).unwrap();
        let hi = ConformalBand::from_parts(mu, m, q + dq, 0.1).unwrap();
        prop_assert!((0..5).all(|t| hi.upper(t) >= lo.upper(t)));
        prop_assert!(conformal_quantile(scores.clone(), a1 + da) <= conformal_quantile(scores, a1));
    }

    #[test]
    fn calibration_traces_rarely_exceed_their_own_in_sample_band(
        traces in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 6), 20..40),
    ) {
        let traces: Vec<ScoreTrace> = traces.into_iter().map(|v| ScoreTrace::new("c", v, "x")).collect();
        let cfg = BandConfig { mode: failprobe_core::conformal::CalibrationMode::InSample, ..BandConfig::new(0.2) };
        let band = fit_band(&traces, &cfg).unwrap();
        let fired = traces.iter().filter(|t| failprobe_core::conformal::detect(&band, t).detected).count();
        // the quantile index ceil((n+1)(1-a)) leaves at most floor(a(n+1)) scores above q
        prop_assert!(fired as f64 <= (0.2 * (traces.len() + 1) as f64).floor());
    }
}
