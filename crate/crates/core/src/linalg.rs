//! Dense row-major matrices and the handful of vector kernels the scores need.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// A dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(Error::DimensionMismatch {
                expected: rows.saturating_mul(cols),
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    /// Keeps the first `n` rows.
    pub fn truncate_rows(&mut self, n: usize) {
        if n < self.rows {
            self.rows = n;
            self.data.truncate(n * self.cols);
        }
    }

    /// Stacks matrices with a common column count.
    pub fn vstack<'a>(parts: impl IntoIterator<Item = &'a Matrix>, cols: usize) -> Result<Self> {
        let mut out = Self::zeros(0, cols);
        for p in parts {
            if p.cols != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    got: p.cols,
                });
            }
            out.data.extend_from_slice(&p.data);
            out.rows += p.rows;
        }
        Ok(out)
    }

    /// Column means.
    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for r in self.iter_rows() {
            axpy(1.0, r, &mut mean);
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Unbiased (divide by `n - 1`) sample covariance, row-major `cols x cols`.
    pub fn covariance(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.rows < 2 {
            return Err(Error::InvalidArgument(alloc::format!(
                "covariance needs at least 2 rows, got {}",
                self.rows
            )));
        }
        let d = self.cols;
        let mean = self.column_means();
        let mut cov = vec![0.0; d * d];
        let mut centered = vec![0.0; d];
        for r in self.iter_rows() {
            for ((c, x), m) in centered.iter_mut().zip(r).zip(&mean) {
                *c = x - m;
            }
            for i in 0..d {
                let ci = centered[i];
                if ci != 0.0 {
                    axpy(ci, &centered[i..], &mut cov[i * d + i..(i + 1) * d]);
                }
            }
        }
        let denom = (self.rows - 1) as f64;
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / denom;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok((mean, cov))
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// `ceil(x)` that ignores floating-point noise just above an integer.
pub(crate) fn ceil_tolerant(x: f64) -> usize {
    let r = libm::round(x);
    if (x - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        libm::ceil(x).max(0.0) as usize
    }
}

/// `floor(x)` that ignores floating-point noise just below an integer.
pub(crate) fn floor_tolerant(x: f64) -> usize {
    let r = libm::round(x);
    if (x - r).abs() < 1e-9 {
        r.max(0.0) as usize
    } else {
        libm::floor(x).max(0.0) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_matches_two_point_variance() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [2.0, 1.0]]).unwrap();
        let (mean, cov) = m.covariance().unwrap();
        assert_eq!(mean, [1.0, 1.0]);
        assert_eq!(cov, [2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tolerant_rounding() {
        assert_eq!(ceil_tolerant(20.0 * 0.95), 19);
        assert_eq!(ceil_tolerant(18.1), 19);
        assert_eq!(floor_tolerant(0.6 * 50.0), 30);
        assert_eq!(floor_tolerant(2.9), 2);
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((softplus(1000.0) - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn new_rejects_bad_shape() {
        assert!(Matrix::new(2, 2, vec![0.0; 3]).is_err());
    }
}
