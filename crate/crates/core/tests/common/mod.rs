//! Brute-force reference implementations used as test oracles. Each one is
//! written from the textbook definition, independently of the library code.
#![allow(dead_code)]

use failprobe_core::probes::{LstmProbe, MlpProbe};
use failprobe_core::Matrix;
use rand::Rng;
use rand_distr::StandardNormal;

pub fn gauss(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * gauss(rng)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fraction of (failure, success) pairs ranked correctly, ties counting half.
pub fn roc_pairwise(scores: &[f64], failed: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if failed[i] && !failed[j] {
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
    }
    num / den
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Mahalanobis distance to the set mean, covariance ridge-regularized with
/// `max(1e-6 tr(S)/d, 1e-9)`.
pub fn mahalanobis_oracle(set: &[Vec<f64>], e: &[f64]) -> f64 {
    let n = set.len();
    let d = e.len();
    let mean: Vec<f64> = (0..d).map(|j| set.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for a in 0..d {
        for b in 0..d {
            let s: f64 = set.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum();
            cov[a][b] = s / (n - 1) as f64;
        }
    }
    let tr: f64 = (0..d).map(|i| cov[i][i]).sum();
    let ridge = (1e-6 * tr / d as f64).max(1e-9);
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let inv = gauss_jordan_inverse(&cov);
    let diff: Vec<f64> = e.iter().zip(&mean).map(|(x, m)| x - m).collect();
    let mut q = 0.0;
    for a in 0..d {
        for b in 0..d {
            q += diff[a] * inv[a][b] * diff[b];
        }
    }
    q.max(0.0).sqrt()
}

/// Mean distance to the `k` nearest rows (Euclidean or cosine), by full sort.
pub fn knn_oracle(set: &[Vec<f64>], e: &[f64], k: usize, cosine: bool) -> f64 {
    let mut ds: Vec<f64> = set
        .iter()
        .map(|r| {
            if cosine {
                let dot: f64 = r.iter().zip(e).map(|(a, b)| a * b).sum();
                let na = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                let nb = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                1.0 - dot / (na * nb)
            } else {
                r.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            }
        })
        .collect();
    ds.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ds[..k].iter().sum::<f64>() / k as f64
}

/// Sum of per-column unbiased variances, via the pairwise-difference identity
/// `var = sum_{i,j} (x_i - x_j)^2 / (2 K (K-1))`.
pub fn variation_oracle(samples: &[Vec<f64>], cols: &[usize]) -> f64 {
    let k = samples.len() as f64;
    let mut total = 0.0;
    for &c in cols {
        let mut s = 0.0;
        for a in samples {
            for b in samples {
                s += (a[c] - b[c]).powi(2);
            }
        }
        total += s / (2.0 * k * (k - 1.0));
    }
    total
}

pub fn rbf(x: &[f64], y: &[f64], h: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-d2 / (2.0 * h * h)).exp()
}

/// Biased MMD^2 as one double sum over all kernel pairs.
pub fn mmd_oracle(xs: &[Vec<f64>], ys: &[Vec<f64>], h: f64) -> f64 {
    let (m, n) = (xs.len() as f64, ys.len() as f64);
    let mut total = 0.0;
    for a in xs {
        for b in xs {
            total += rbf(a, b, h) / (m * m);
        }
    }
    for a in ys {
        for b in ys {
            total += rbf(a, b, h) / (n * n);
        }
    }
    for a in xs {
        for b in ys {
            total -= 2.0 * rbf(a, b, h) / (m * n);
        }
    }
    total
}

/// STAC from chunk rows: previous chunk rows `stride..H` against current rows
/// `0..H-stride`.
pub fn stac_oracle(prev: &[Matrix], curr: &[Matrix], stride: usize, h: f64) -> f64 {
    let horizon = prev[0].rows();
    let tail = |m: &Matrix| -> Vec<f64> { (stride..horizon).flat_map(|r| m.row(r).to_vec()).collect() };
    let head = |m: &Matrix| -> Vec<f64> { (0..horizon - stride).flat_map(|r| m.row(r).to_vec()).collect() };
    let xs: Vec<Vec<f64>> = prev.iter().map(tail).collect();
    let ys: Vec<Vec<f64>> = curr.iter().map(head).collect();
    mmd_oracle(&xs, &ys, h)
}

/// Ward clustering from explicit member lists, linkage
/// `sqrt(2 |A||B| / (|A|+|B|)) * |c_A - c_B|`; entropy of the size histogram.
pub fn ward_entropy_oracle(points: &[Vec<f64>], threshold: f64) -> f64 {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    let centroid = |c: &[usize]| -> Vec<f64> {
        let d = points[0].len();
        (0..d).map(|j| c.iter().map(|&i| points[i][j]).sum::<f64>() / c.len() as f64).collect()
    };
    loop {
        if clusters.len() < 2 {
            break;
        }
        let mut best = (0, 0, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (na, nb) = (clusters[a].len() as f64, clusters[b].len() as f64);
                let (ca, cb) = (centroid(&clusters[a]), centroid(&clusters[b]));
                let dist: f64 = ca.iter().zip(&cb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let link = (2.0 * na * nb / (na + nb)).sqrt() * dist;
                if link < best.2 {
                    best = (a, b, link);
                }
            }
        }
        if best.2 > threshold {
            break;
        }
        let merged = clusters.remove(best.1);
        clusters[best.0].extend(merged);
    }
    let k = points.len() as f64;
    clusters
        .iter()
        .map(|c| {
            let p = c.len() as f64 / k;
            -p * p.ln()
        })
        .sum()
}

/// Prefix sums of sigmoid(w2 . tanh(W1 e + b1) + b2), one step at a time.
pub fn mlp_scores_oracle(p: &MlpProbe, emb: &Matrix) -> Vec<f64> {
    let mut out = Vec::new();
    let mut acc = 0.0;
    for t in 0..emb.rows() {
        let e = emb.row(t);
        let mut g = p.b2[0];
        for j in 0..p.hidden {
            let mut z = p.b1[j];
            for i in 0..p.input_dim {
                z += p.w1[j * p.input_dim + i] * e[i];
            }
            g += p.w2[j] * z.tanh();
        }
        acc += sig(g);
        out.push(acc);
    }
    out
}

/// Standard LSTM recurrences gate by gate (input, forget, cell, output).
pub fn lstm_scores_oracle(p: &LstmProbe, emb: &Matrix) -> Vec<f64> {
    let (d, hd) = (p.input_dim, p.hidden);
    let w = d + hd;
    let mut h = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    let mut out = Vec::new();
    for t in 0..emb.rows() {
        let x = emb.row(t);
        let pre = |gate: usize, j: usize, h: &[f64]| {
            let r = gate * hd + j;
            let mut z = p.b[r];
            for i in 0..d {
                z += p.w[r * w + i] * x[i];
            }
            for i in 0..hd {
                z += p.w[r * w + d + i] * h[i];
            }
            z
        };
        let mut h_new = vec![0.0; hd];
        for j in 0..hd {
            let ig = sig(pre(0, j, &h));
            let fg = sig(pre(1, j, &h));
            let gg = pre(2, j, &h).tanh();
            let og = sig(pre(3, j, &h));
            c[j] = fg * c[j] + ig * gg;
            h_new[j] = og * c[j].tanh();
        }
        h = h_new;
        let logit: f64 = p.head_b[0] + (0..hd).map(|j| p.head_w[j] * h[j]).sum::<f64>();
        out.push(sig(logit));
    }
    out
}

/// First index where `values[t] > mu[t] + q m[t]` (index clamped to the band).
pub fn first_exceed_scan(values: &[f64], mu: &[f64], m: &[f64], q: f64) -> Option<usize> {
    for (t, v) in values.iter().enumerate() {
        let i = t.min(mu.len() - 1);
        if *v > mu[i] + q * m[i] {
            return Some(t);
        }
    }
    None
}
