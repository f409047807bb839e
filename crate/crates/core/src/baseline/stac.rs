//! Consistency between consecutive action chunks (STAC) via squared MMD.
//!
//! A chunk predicted at decision `t-1` covers timesteps `[0, H)` relative to
//! that decision; the next chunk starts `H'` steps later. The overlap is rows
//! `H'..H` of the previous chunk and rows `0..H-H'` of the current one.

use alloc::vec::Vec;

use crate::linalg::{squared_distance, Matrix};
use crate::{Error, Result};

pub const DEFAULT_BANDWIDTH: f64 = 1.0;

/// `exp(-|x - y|^2 / (2 h^2))`
#[inline]
pub fn rbf_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    libm::exp(-squared_distance(x, y) / (2.0 * bandwidth * bandwidth))
}

/// Biased (V-statistic) squared MMD between two sample sets.
pub fn mmd_squared(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::Empty("MMD sample set"));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mean_k = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let mut s = 0.0;
        for u in a {
            for v in b {
                s += rbf_kernel(u, v, bandwidth);
            }
        }
        s / (a.len() * b.len()) as f64
    };
    Ok((mean_k(x, x) + mean_k(y, y) - 2.0 * mean_k(x, y)).max(0.0))
}

/// Flattened overlap segments of consecutive chunks.
pub fn overlap_vectors(prev: &Matrix, curr: &Matrix, replan_stride: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = prev.rows();
    if curr.rows() != h || curr.cols() != prev.cols() {
        return Err(Error::DimensionMismatch {
            expected: h * prev.cols(),
            got: curr.rows() * curr.cols(),
        });
    }
    if replan_stride >= h {
        return Err(Error::InvalidArgument(alloc::format!(
            "replan stride {replan_stride} leaves no overlap in a chunk of horizon {h}"
        )));
    }
    let a = prev.cols();
    let p = prev.as_slice()[replan_stride * a..].to_vec();
    let c = curr.as_slice()[..(h - replan_stride) * a].to_vec();
    Ok((p, c))
}

/// Squared MMD between the overlapping segments of two sets of sampled chunks.
pub fn stac_score(prev: &[Matrix], curr: &[Matrix], replan_stride: usize, bandwidth: f64) -> Result<f64> {
    if prev.is_empty() || curr.is_empty() {
        return Err(Error::Empty("chunk samples"));
    }
    let h = prev[0].rows();
    let shape_ok = |m: &Matrix| m.rows() == prev[0].rows() && m.cols() == prev[0].cols();
    if !prev.iter().chain(curr).all(shape_ok) {
        return Err(Error::InvalidArgument("chunk samples differ in shape".into()));
    }
    if replan_stride >= h {
        return Err(Error::InvalidArgument(alloc::format!(
            "replan stride {replan_stride} leaves no overlap in a chunk of horizon {h}"
        )));
    }
    let a = prev[0].cols();
    let xs: Vec<Vec<f64>> = prev.iter().map(|m| m.as_slice()[replan_stride * a..].to_vec()).collect();
    let ys: Vec<Vec<f64>> = curr.iter().map(|m| m.as_slice()[..(h - replan_stride) * a].to_vec()).collect();
    mmd_squared(&xs, &ys, bandwidth)
}

/// [`stac_score`] with a single chunk on each side.
pub fn stac_single_score(prev: &Matrix, curr: &Matrix, replan_stride: usize, bandwidth: f64) -> Result<f64> {
    let (x, y) = overlap_vectors(prev, curr, replan_stride)?;
    mmd_squared(&[x], &[y], bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn chunk(rows: &[[f64; 1]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_sets_score_zero() {
        let a = vec![chunk(&[[0.0], [1.0], [2.0]]), chunk(&[[0.5], [1.5], [2.5]])];
        // shifting by the stride makes the overlaps identical
        let b = vec![chunk(&[[1.0], [2.0], [9.0]]), chunk(&[[1.5], [2.5], [9.0]])];
        assert!(stac_score(&a, &b, 1, 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn singleton_closed_form() {
        // overlap vectors differ by |x - y|^2 = 2
        let prev = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0]]).unwrap();
        let curr = Matrix::from_rows(&[[0.0, 2.0], [5.0, 5.0]]).unwrap();
        let s = stac_single_score(&prev, &curr, 1, 1.0).unwrap();
        assert!((s - (2.0 - 2.0 * libm::exp(-1.0))).abs() < 1e-12);
        assert!((s - 1.2642).abs() < 1e-4);
    }

    #[test]
    fn ln2_distance_gives_one() {
        let x = libm::sqrt(2.0 * libm::log(2.0));
        let prev = chunk(&[[0.0], [0.0]]);
        let curr = chunk(&[[x], [0.0]]);
        assert!((stac_single_score(&prev, &curr, 1, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let c = chunk(&[[0.0], [0.0]]);
        assert!(stac_single_score(&c, &c, 2, 1.0).is_err());
        assert!(stac_score(&[c.clone()], &[c.clone()], 3, 1.0).is_err());
    }
}
