mod common;

use common::*;
use failprobe_core::baseline::{
    cluster_entropy, embedding_distance_score, mmd_squared, stac_score, total_variation, ActionSubspace,
    DistanceMetric, GaussianStats, ReferenceBank, SubspaceName,
};
use failprobe_core::conformal::{conformal_quantile, detect, ConformalBand};
use failprobe_core::eval::roc_auc;
use failprobe_core::probes::{lstm_score_trace, mlp_score_trace, LstmProbe, MlpProbe};
use failprobe_core::trace::ScoreTrace;
use failprobe_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

#[test]
fn roc_auc_matches_pair_counting_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = 200;
        let labels: Vec<bool> = (0..n).map(|i| i % 3 == 0 || rng.gen_bool(0.3)).collect();
        // coarse grid so many scores tie
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..25) as f64 / 4.0).collect();
        let got = roc_auc(&scores, &labels).unwrap();
        assert!((got - roc_pairwise(&scores, &labels)).abs() < TOL);
    }
}

fn bank(rng: &mut ChaCha8Rng, n: usize, d: usize, metric: &DistanceMetric) -> (Matrix, Matrix, ReferenceBank) {
    let succ = random_matrix(rng, n, d, 1.0);
    let mut fail = random_matrix(rng, n + 3, d, 1.5);
    for i in 0..fail.rows() {
        fail.row_mut(i)[0] += 2.0;
    }
    let b = ReferenceBank::for_metric(succ.clone(), fail.clone(), metric, 0).unwrap();
    (succ, fail, b)
}

#[test]
fn mahalanobis_matches_dense_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let metric = DistanceMetric::Mahalanobis;
    for _ in 0..50 {
        let d = rng.gen_range(2..6);
        let (succ, fail, b) = bank(&mut rng, 5 + d, d, &metric);
        let e: Vec<f64> = (0..d).map(|_| 2.0 * gauss(&mut rng)).collect();
        let want = mahalanobis_oracle(&rows_of(&succ), &e) - mahalanobis_oracle(&rows_of(&fail), &e);
        let got = embedding_distance_score(&e, &b, &metric).unwrap();
        assert!(close(got, want, TOL), "{got} vs {want}");
    }
}

#[test]
fn mahalanobis_with_identity_covariance_is_euclidean() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let d = rng.gen_range(1..8);
        let mean: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let mut eye = vec![0.0; d * d];
        (0..d).for_each(|i| eye[i * d + i] = 1.0);
        let stats = GaussianStats::from_regularized(mean.clone(), eye).unwrap();
        let e: Vec<f64> = (0..d).map(|_| 3.0 * gauss(&mut rng)).collect();
        let euclid = e.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!((stats.mahalanobis(&e) - euclid).abs() < TOL);
    }
}

#[test]
fn knn_distances_match_sorted_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let cosine = case % 2 == 1;
        let k = rng.gen_range(1..8);
        let metric = if cosine {
            DistanceMetric::CosineKnn { k }
        } else {
            DistanceMetric::EuclidKnn { k }
        };
        let d = rng.gen_range(2..10);
        let (succ, fail, b) = bank(&mut rng, 12, d, &metric);
        let e: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let want = knn_oracle(&rows_of(&succ), &e, k, cosine) - knn_oracle(&rows_of(&fail), &e, k, cosine);
        let got = embedding_distance_score(&e, &b, &metric).unwrap();
        assert!(close(got, want, TOL), "{got} vs {want}");
    }
}

#[test]
fn total_variation_matches_pairwise_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let names = [SubspaceName::All, SubspaceName::Translation, SubspaceName::Rotation, SubspaceName::Gripper];
    for case in 0..50 {
        let (k, horizon, a) = (rng.gen_range(2..12), rng.gen_range(1..5), 7);
        let samples = random_matrix(&mut rng, k, horizon * a, 0.7);
        let sub = ActionSubspace::standard(names[case % 4], a);
        let cols = sub.flat_columns(horizon, a).unwrap();
        let want = variation_oracle(&rows_of(&samples), &cols);
        assert!(close(total_variation(&samples, &sub, a).unwrap(), want, TOL));
    }
}

#[test]
fn total_variation_equals_sum_of_column_variances_k10_d6() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples = random_matrix(&mut rng, 10, 6, 1.0);
    let mut want = 0.0;
    for c in 0..6 {
        let col: Vec<f64> = (0..10).map(|i| samples.get(i, c)).collect();
        let m = col.iter().sum::<f64>() / 10.0;
        want += col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 9.0;
    }
    let sub = ActionSubspace::standard(SubspaceName::All, 6);
    assert!(close(total_variation(&samples, &sub, 6).unwrap(), want, TOL));
}

#[test]
fn mmd_and_stac_match_double_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (k, horizon, a) = (rng.gen_range(1..6), rng.gen_range(2..6), rng.gen_range(1..4));
        let stride = rng.gen_range(1..horizon);
        let h = rng.gen_range(0.5..2.0);
        let prev: Vec<Matrix> = (0..k).map(|_| random_matrix(&mut rng, horizon, a, 0.5)).collect();
        let curr: Vec<Matrix> = (0..k).map(|_| random_matrix(&mut rng, horizon, a, 0.5)).collect();
        let got = stac_score(&prev, &curr, stride, h).unwrap();
        assert!(close(got, stac_oracle(&prev, &curr, stride, h), TOL));

        let xs = rows_of(&random_matrix(&mut rng, 5, 3, 1.0));
        let ys = rows_of(&random_matrix(&mut rng, 5, 3, 1.0));
        assert!(close(mmd_squared(&xs, &ys, h).unwrap(), mmd_oracle(&xs, &ys, h), TOL));
    }
}

#[test]
fn switching_policy_has_larger_stac_than_smooth_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (horizon, stride, k) = (4, 2, 5);
    // chunk sampled at decision `i`, covering absolute steps i*stride..i*stride+H
    let chunk = |rng: &mut ChaCha8Rng, i: usize, switching: bool| -> Matrix {
        let rows: Vec<Vec<f64>> = (0..horizon)
            .map(|h| {
                let t = (i * stride + h) as f64;
                let base = if switching && i % 2 == 1 { -(0.3 * t).sin() } else { (0.3 * t).sin() };
                vec![base + 0.05 * gauss(rng)]
            })
            .collect();
        Matrix::from_rows(&rows).unwrap()
    };
    let mean_score = |rng: &mut ChaCha8Rng, switching: bool| {
        let chunks: Vec<Vec<Matrix>> = (0..20).map(|i| (0..k).map(|_| chunk(rng, i, switching)).collect()).collect();
        let s: f64 = chunks.windows(2).map(|w| stac_score(&w[0], &w[1], stride, 1.0).unwrap()).sum();
        s / 19.0
    };
    let smooth = mean_score(&mut rng, false);
    let switching = mean_score(&mut rng, true);
    assert!(switching > smooth, "{switching} <= {smooth}");
}

#[test]
fn cluster_entropy_matches_explicit_ward() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let k = rng.gen_range(2..12);
        let samples = random_matrix(&mut rng, k, 3, 1.0);
        let thr = rng.gen_range(0.2..3.0);
        let want = ward_entropy_oracle(&rows_of(&samples), thr);
        assert!(close(cluster_entropy(&samples, thr).unwrap(), want, TOL));
    }
}

#[test]
fn probe_scores_match_scalar_recurrences() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let (d, hidden, t) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..12));
        let emb = random_matrix(&mut rng, t, d, 1.0);
        let mlp = MlpProbe::new(d, hidden, &mut rng);
        let got = mlp_score_trace(&mlp, &emb, "r").unwrap().values;
        for (a, b) in got.iter().zip(mlp_scores_oracle(&mlp, &emb)) {
            assert!(close(*a, b, 1e-12));
        }
        let lstm = LstmProbe::new(d, hidden, &mut rng);
        let got = lstm_score_trace(&lstm, &emb, "r").unwrap().values;
        for (a, b) in got.iter().zip(lstm_scores_oracle(&lstm, &emb)) {
            assert!(close(*a, b, 1e-12));
        }
    }
}

#[test]
fn detection_matches_linear_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let t = rng.gen_range(5..40);
        let mu: Vec<f64> = (0..t).map(|i| 0.5 * i as f64).collect();
        let m: Vec<f64> = (0..t).map(|_| rng.gen_range(0.2..1.0)).collect();
        let q = rng.gen_range(0.5..2.0);
        let band = ConformalBand::from_parts(mu.clone(), m.clone(), q, 0.1).unwrap();
        // ramps past the band somewhere in the middle
        let slope = rng.gen_range(0.5..0.9);
        let len = t + rng.gen_range(0..5);
        let values: Vec<f64> = (0..len).map(|i| slope * i as f64 + 0.1 * gauss(&mut rng)).collect();
        let det = detect(&band, &ScoreTrace::new("r", values.clone(), "x"));
        let scan = first_exceed_scan(&values, &mu, &m, q);
        assert_eq!(det.first_exceed_step, scan);
        assert_eq!(det.detected, scan.is_some());
        let rel = scan.map_or(1.0, |k| (k + 1) as f64 / len as f64);
        assert!((det.relative_time - rel).abs() < 1e-15);
    }
}

#[test]
fn conformal_quantile_is_the_order_statistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let n = rng.gen_range(1..60);
        let alpha = rng.gen_range(0.01..0.6);
        let scores: Vec<f64> = (0..n).map(|_| gauss(&mut rng)).collect();
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let idx = ((n + 1) as f64 * (1.0 - alpha)).ceil() as usize;
        let want = if idx > n { f64::INFINITY } else { sorted[idx - 1] };
        assert_eq!(conformal_quantile(scores, alpha), want);
    }
}
