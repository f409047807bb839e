//! Sample-consistency scores over K sampled action chunks.

use alloc::format;
use alloc::vec::Vec;

use crate::linalg::{squared_distance, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SubspaceName {
    All,
    Translation,
    Rotation,
    Gripper,
}

impl SubspaceName {
    pub fn name(self) -> &'static str {
        match self {
            SubspaceName::All => "all",
            SubspaceName::Translation => "translation",
            SubspaceName::Rotation => "rotation",
            SubspaceName::Gripper => "gripper",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::All, Self::Translation, Self::Rotation, Self::Gripper]
            .into_iter()
            .find(|n| n.name() == s)
    }
}

/// A subset of action dimensions, e.g. the translational `x, y, z`.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActionSubspace {
    pub name: SubspaceName,
    pub index_mask: Vec<usize>,
}

impl ActionSubspace {
    /// Default masks for `(x, y, z, rx, ry, rz, grip)` actions; `All` covers
    /// every dimension of `action_dim`.
    pub fn standard(name: SubspaceName, action_dim: usize) -> Self {
        let index_mask = match name {
            SubspaceName::All => (0..action_dim).collect(),
            SubspaceName::Translation => (0..3).collect(),
            SubspaceName::Rotation => (3..6).collect(),
            SubspaceName::Gripper => alloc::vec![6],
        };
        Self { name, index_mask }
    }

    /// Flattened (time-major) column indices selected in an `H x a` chunk.
    pub fn flat_columns(&self, horizon: usize, action_dim: usize) -> Result<Vec<usize>> {
        if self.index_mask.is_empty() {
            return Err(Error::InvalidArgument(format!("subspace `{}` has an empty mask", self.name.name())));
        }
        if let Some(i) = self.index_mask.iter().find(|&&i| i >= action_dim) {
            return Err(Error::InvalidArgument(format!(
                "subspace `{}` index {i} outside action dimension {action_dim}",
                self.name.name()
            )));
        }
        Ok((0..horizon * action_dim)
            .filter(|j| self.index_mask.contains(&(j % action_dim)))
            .collect())
    }
}

/// Stacks K chunks (each `H x a`) into a `K x (H*a)` matrix, time-major.
pub fn flatten_chunks(chunks: &[Matrix]) -> Result<Matrix> {
    let rows: Vec<&[f64]> = chunks.iter().map(Matrix::as_slice).collect();
    Matrix::from_rows(&rows)
}

/// Trace of the unbiased sample covariance of `samples` (K x D) restricted to
/// the subspace's columns, with D = H * `action_dim`.
pub fn total_variation(samples: &Matrix, subspace: &ActionSubspace, action_dim: usize) -> Result<f64> {
    let k = samples.rows();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("total variation needs K >= 2 samples, got {k}")));
    }
    if action_dim == 0 || samples.cols() % action_dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "sample width {} is not a multiple of action dimension {action_dim}",
            samples.cols()
        )));
    }
    let cols = subspace.flat_columns(samples.cols() / action_dim, action_dim)?;
    let mut total = 0.0;
    for &c in &cols {
        let mean = samples.iter_rows().map(|r| r[c]).sum::<f64>() / k as f64;
        total += samples.iter_rows().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<f64>();
    }
    Ok(total / (k - 1) as f64)
}

/// Cluster sizes from Ward agglomerative clustering, merging while the
/// smallest Lance-Williams linkage distance is `<= threshold`.
pub(crate) fn ward_cluster_sizes(samples: &Matrix, threshold: f64) -> Vec<usize> {
    let n = samples.rows();
    let mut size: Vec<usize> = alloc::vec![1; n];
    let mut active: Vec<bool> = alloc::vec![true; n];
    // Full symmetric matrix of Euclidean linkage distances.
    let mut dist = alloc::vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = libm::sqrt(squared_distance(samples.row(i), samples.row(j)));
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    for _ in 1..n {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                let d = dist[i * n + j];
                if best.map_or(true, |(_, _, b)| d < b) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, dij)) = best else { break };
        if dij > threshold {
            break;
        }
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in (0..n).filter(|&k| active[k] && k != i && k != j) {
            let nk = size[k] as f64;
            let (dik, djk) = (dist[i * n + k], dist[j * n + k]);
            let sq = ((ni + nk) * dik * dik + (nj + nk) * djk * djk - nk * dij * dij) / (ni + nj + nk);
            let d = libm::sqrt(sq.max(0.0));
            dist[i * n + k] = d;
            dist[k * n + i] = d;
        }
        size[i] += size[j];
        active[j] = false;
    }
    (0..n).filter(|&i| active[i]).map(|i| size[i]).collect()
}

/// Shannon entropy (nats) of the Ward cluster-size histogram of `samples`.
pub fn cluster_entropy(samples: &Matrix, distance_threshold: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("action samples"));
    }
    if !(distance_threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distance threshold must be positive, got {distance_threshold}"
        )));
    }
    let k = samples.rows() as f64;
    let h = ward_cluster_sizes(samples, distance_threshold)
        .into_iter()
        .map(|c| {
            let p = c as f64 / k;
            -p * libm::log(p)
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn all(a: usize) -> ActionSubspace {
        ActionSubspace::standard(SubspaceName::All, a)
    }

    #[test]
    fn two_point_variance() {
        let s = Matrix::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        assert_eq!(total_variation(&s, &all(2), 2).unwrap(), 2.0);
    }

    #[test]
    fn identical_samples_have_zero_variation() {
        let s = Matrix::from_rows(&[[1.0, 3.0, 5.0]; 4]).unwrap();
        assert_eq!(total_variation(&s, &all(3), 3).unwrap(), 0.0);
    }

    #[test]
    fn subspace_masks_select_per_horizon_step() {
        let sub = ActionSubspace::standard(SubspaceName::Gripper, 7);
        assert_eq!(sub.flat_columns(2, 7).unwrap(), [6, 13]);
        let tr = ActionSubspace::standard(SubspaceName::Translation, 7);
        assert_eq!(tr.flat_columns(1, 7).unwrap(), [0, 1, 2]);
        assert!(sub.flat_columns(1, 5).is_err());
    }

    #[test]
    fn too_few_samples() {
        let s = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(total_variation(&s, &all(2), 2).is_err());
    }

    #[test]
    fn cluster_entropy_cases() {
        let same = Matrix::from_rows(&[[0.3, 0.3]; 6]).unwrap();
        assert_eq!(cluster_entropy(&same, 0.01).unwrap(), 0.0);

        let two = Matrix::from_rows(&[[0.0], [100.0]]).unwrap();
        assert!((cluster_entropy(&two, 1.0).unwrap() - 0.6931).abs() < 1e-4);

        let rows: Vec<[f64; 1]> = (0..10).map(|i| [i as f64 * 10.0]).collect();
        let ten = Matrix::from_rows(&rows).unwrap();
        assert!((cluster_entropy(&ten, 1.0).unwrap() - 2.3026).abs() < 1e-4);
    }

    #[test]
    fn ward_merges_tight_groups() {
        let s = Matrix::from_rows(&[[0.0], [0.1], [10.0], [10.1], [10.2]]).unwrap();
        let mut sizes = ward_cluster_sizes(&s, 1.0);
        sizes.sort_unstable();
        assert_eq!(sizes, vec![2, 3]);
    }

    #[test]
    fn cluster_entropy_rejects_bad_threshold() {
        let s = Matrix::from_rows(&[[0.0]]).unwrap();
        assert!(cluster_entropy(&s, 0.0).is_err());
    }
}
