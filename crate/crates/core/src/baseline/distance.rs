//! Embedding-distance scores: `s = d(e, E_succ) - d(e, E_fail)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, norm, squared_distance, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum DistanceMetric {
    Mahalanobis,
    EuclidKnn { k: usize },
    CosineKnn { k: usize },
    PcaKmeans { dim: usize, clusters: usize },
}

impl DistanceMetric {
    pub fn name(&self) -> &'static str {
        match self {
            DistanceMetric::Mahalanobis => "mahalanobis",
            DistanceMetric::EuclidKnn { .. } => "euclid_knn",
            DistanceMetric::CosineKnn { .. } => "cosine_knn",
            DistanceMetric::PcaKmeans { .. } => "pca_kmeans",
        }
    }
}

/// Mean and regularized inverse covariance of one reference set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// Unbiased covariance, row-major `d x d`.
    pub covariance: Vec<f64>,
    /// Inverse of `covariance + eps * I`.
    pub precision: Vec<f64>,
    pub ridge: f64,
}

impl GaussianStats {
    /// Fits mean and covariance with ridge `eps = max(1e-6 * tr(S) / d, 1e-9)`.
    pub fn fit(set: &Matrix) -> Result<Self> {
        let (mean, covariance) = set.covariance()?;
        let d = set.cols();
        let trace: f64 = (0..d).map(|i| covariance[i * d + i]).sum();
        let ridge = (1e-6 * trace / d as f64).max(1e-9);
        let mut reg = covariance.clone();
        for i in 0..d {
            reg[i * d + i] += ridge;
        }
        let precision = invert_spd(&reg, d)?;
        Ok(Self {
            mean,
            covariance,
            precision,
            ridge,
        })
    }

    /// Uses `covariance` as the already-regularized covariance.
    pub fn from_regularized(mean: Vec<f64>, covariance: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if covariance.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: covariance.len(),
            });
        }
        let precision = invert_spd(&covariance, d)?;
        Ok(Self {
            mean,
            covariance,
            precision,
            ridge: 0.0,
        })
    }

    pub fn mahalanobis(&self, e: &[f64]) -> f64 {
        let d = self.mean.len();
        let diff: Vec<f64> = e.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let mut q = 0.0;
        for i in 0..d {
            q += diff[i] * dot(&self.precision[i * d..(i + 1) * d], &diff);
        }
        libm::sqrt(q.max(0.0))
    }
}

fn invert_spd(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let m = DMatrix::from_row_slice(d, d, a);
    let chol = m.cholesky().ok_or(Error::DegenerateCovariance)?;
    let inv = chol.inverse();
    let mut out = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            out.push(inv[(i, j)]);
        }
    }
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::DegenerateCovariance)
    }
}

/// PCA projection followed by k-means; distance is to the nearest centroid.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PcaKmeans {
    pub requested_dim: usize,
    pub requested_clusters: usize,
    pub mean: Vec<f64>,
    /// `dim x d`, rows are unit principal directions by decreasing variance.
    pub components: Matrix,
    /// `clusters x dim`
    pub centroids: Matrix,
}

const KMEANS_ITERS: usize = 50;

impl PcaKmeans {
    /// `dim` and `clusters` are clipped to the feature dimension and the
    /// number of points respectively.
    pub fn fit(set: &Matrix, dim: usize, clusters: usize, seed: u64) -> Result<Self> {
        if set.rows() < 2 {
            return Err(Error::InvalidArgument(format!(
                "pca_kmeans needs at least 2 reference points, got {}",
                set.rows()
            )));
        }
        if dim == 0 || clusters == 0 {
            return Err(Error::InvalidArgument("pca_kmeans dim and clusters must be positive".into()));
        }
        let d = set.cols();
        let (mean, cov) = set.covariance()?;
        let eig = nalgebra::SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let dim_eff = dim.min(d);
        let mut components = Matrix::zeros(dim_eff, d);
        for (r, &c) in order.iter().take(dim_eff).enumerate() {
            let col = eig.eigenvectors.column(c);
            // Sign convention: largest-magnitude entry positive.
            let pivot = (0..d).max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs())).unwrap_or(0);
            let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
            for (j, v) in components.row_mut(r).iter_mut().enumerate() {
                *v = sign * col[j];
            }
        }
        let mut projected = Matrix::zeros(set.rows(), dim_eff);
        for i in 0..set.rows() {
            let p = project(&components, &mean, set.row(i));
            projected.row_mut(i).copy_from_slice(&p);
        }
        let centroids = kmeans(&projected, clusters.min(set.rows()), seed);
        Ok(Self {
            requested_dim: dim,
            requested_clusters: clusters,
            mean,
            components,
            centroids,
        })
    }

    pub fn distance(&self, e: &[f64]) -> f64 {
        let p = project(&self.components, &self.mean, e);
        let nearest = self
            .centroids
            .iter_rows()
            .map(|c| squared_distance(c, &p))
            .fold(f64::INFINITY, f64::min);
        libm::sqrt(nearest.max(0.0))
    }
}

fn project(components: &Matrix, mean: &[f64], e: &[f64]) -> Vec<f64> {
    let centered: Vec<f64> = e.iter().zip(mean).map(|(x, m)| x - m).collect();
    components.iter_rows().map(|c| dot(c, &centered)).collect()
}

/// k-means++ seeding followed by a fixed number of Lloyd iterations.
fn kmeans(points: &Matrix, k: usize, seed: u64) -> Matrix {
    let n = points.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Matrix::zeros(k, points.cols());
    centroids.row_mut(0).copy_from_slice(points.row(rng.gen_range(0..n)));
    let mut nearest: Vec<f64> = points.iter_rows().map(|p| squared_distance(p, centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    idx = i;
                    break;
                }
                target -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for (i, p) in points.iter_rows().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(p, centroids.row(c)));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_ITERS {
        for (i, p) in points.iter_rows().enumerate() {
            assign[i] = (0..k)
                .min_by(|&a, &b| {
                    squared_distance(p, centroids.row(a)).total_cmp(&squared_distance(p, centroids.row(b)))
                })
                .unwrap_or(0);
        }
        let mut sums = Matrix::zeros(k, points.cols());
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter_rows().enumerate() {
            crate::linalg::axpy(1.0, p, sums.row_mut(assign[i]));
            counts[assign[i]] += 1;
        }
        for c in 0..k {
            // empty clusters keep their previous centroid
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
    }
    centroids
}

/// Embeddings from successful and failed training rollouts plus whatever
/// per-set statistics the chosen metric needs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReferenceBank {
    succ: Matrix,
    fail: Matrix,
    succ_stats: Option<GaussianStats>,
    fail_stats: Option<GaussianStats>,
    pca_kmeans: Option<(PcaKmeans, PcaKmeans)>,
}

impl ReferenceBank {
    pub fn new(succ: Matrix, fail: Matrix) -> Result<Self> {
        if succ.is_empty() || fail.is_empty() {
            return Err(Error::Empty("reference bank side"));
        }
        if succ.cols() != fail.cols() {
            return Err(Error::DimensionMismatch {
                expected: succ.cols(),
                got: fail.cols(),
            });
        }
        Ok(Self {
            succ,
            fail,
            succ_stats: None,
            fail_stats: None,
            pca_kmeans: None,
        })
    }

    /// Builds a bank and fits what `metric` needs.
    pub fn for_metric(succ: Matrix, fail: Matrix, metric: &DistanceMetric, seed: u64) -> Result<Self> {
        let mut bank = Self::new(succ, fail)?;
        bank.prepare(metric, seed)?;
        Ok(bank)
    }

    pub fn prepare(&mut self, metric: &DistanceMetric, seed: u64) -> Result<()> {
        match *metric {
            DistanceMetric::Mahalanobis => {
                if self.succ_stats.is_none() {
                    self.succ_stats = Some(GaussianStats::fit(&self.succ)?);
                    self.fail_stats = Some(GaussianStats::fit(&self.fail)?);
                }
            }
            DistanceMetric::EuclidKnn { k } | DistanceMetric::CosineKnn { k } => {
                let size = self.succ.rows().min(self.fail.rows());
                if k == 0 || k > size {
                    return Err(Error::KTooLarge { k, size });
                }
            }
            DistanceMetric::PcaKmeans { dim, clusters } => {
                self.pca_kmeans = Some((
                    PcaKmeans::fit(&self.succ, dim, clusters, seed)?,
                    PcaKmeans::fit(&self.fail, dim, clusters, seed)?,
                ));
            }
        }
        Ok(())
    }

    /// Installs explicit Gaussian statistics for both sides.
    pub fn with_stats(mut self, succ: GaussianStats, fail: GaussianStats) -> Self {
        self.succ_stats = Some(succ);
        self.fail_stats = Some(fail);
        self
    }

    pub fn succ(&self) -> &Matrix {
        &self.succ
    }

    pub fn fail(&self) -> &Matrix {
        &self.fail
    }

    pub fn dim(&self) -> usize {
        self.succ.cols()
    }

    pub fn succ_stats(&self) -> Option<&GaussianStats> {
        self.succ_stats.as_ref()
    }
}

fn knn_mean(set: &Matrix, k: usize, dist: impl Fn(&[f64]) -> f64) -> f64 {
    let mut d: Vec<f64> = set.iter_rows().map(dist).collect();
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    d[..k].iter().sum::<f64>() / k as f64
}

fn cosine_distance(a: &[f64], b: &[f64], norm_a: f64) -> f64 {
    let nb = norm(b);
    let denom = norm_a * nb;
    let cos = if denom > 0.0 { dot(a, b) / denom } else { 0.0 };
    1.0 - cos
}

/// `d(e, E_succ) - d(e, E_fail)` under `metric`.
pub fn embedding_distance_score(e: &[f64], bank: &ReferenceBank, metric: &DistanceMetric) -> Result<f64> {
    if e.len() != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            got: e.len(),
        });
    }
    let not_prepared = || Error::InvalidArgument(format!("reference bank was not prepared for {}", metric.name()));
    match *metric {
        DistanceMetric::Mahalanobis => {
            let (s, f) = bank
                .succ_stats
                .as_ref()
                .zip(bank.fail_stats.as_ref())
                .ok_or_else(not_prepared)?;
            Ok(s.mahalanobis(e) - f.mahalanobis(e))
        }
        DistanceMetric::EuclidKnn { k } => {
            check_k(bank, k)?;
            let d = |set: &Matrix| knn_mean(set, k, |r| libm::sqrt(squared_distance(r, e)));
            Ok(d(&bank.succ) - d(&bank.fail))
        }
        DistanceMetric::CosineKnn { k } => {
            check_k(bank, k)?;
            let ne = norm(e);
            let d = |set: &Matrix| knn_mean(set, k, |r| cosine_distance(e, r, ne));
            Ok(d(&bank.succ) - d(&bank.fail))
        }
        DistanceMetric::PcaKmeans { dim, clusters } => {
            let (s, f) = bank.pca_kmeans.as_ref().ok_or_else(not_prepared)?;
            if s.requested_dim != dim || s.requested_clusters != clusters {
                return Err(not_prepared());
            }
            Ok(s.distance(e) - f.distance(e))
        }
    }
}

fn check_k(bank: &ReferenceBank, k: usize) -> Result<()> {
    let size = bank.succ.rows().min(bank.fail.rows());
    if k == 0 || k > size {
        return Err(Error::KTooLarge { k, size });
    }
    Ok(())
}
