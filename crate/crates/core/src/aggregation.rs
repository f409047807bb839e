//! Reduction of a step's raw feature tensor to a single embedding vector.
//!
//! Token-decoding policies dump an `n x d` matrix (one row per generated
//! token); flow-matching policies dump an `H x k x d` tensor (action horizon by
//! integration step). Each reduced axis uses one of four methods, and
//! [`AggMethod::FirstAndLast`] doubles the feature dimension on that axis.
//!
//! For flow tensors the diffusion axis `k` is reduced first, then the horizon
//! axis `H`, so the output layout is deterministic when both axes concatenate.

use alloc::vec::Vec;

use crate::trace::{EmbeddingShape, RawEmbedding};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AggMethod {
    First,
    Last,
    Mean,
    FirstAndLast,
}

impl AggMethod {
    pub const ALL: [AggMethod; 4] = [
        AggMethod::First,
        AggMethod::Last,
        AggMethod::Mean,
        AggMethod::FirstAndLast,
    ];

    /// Output width multiplier.
    pub fn width(self) -> usize {
        match self {
            AggMethod::FirstAndLast => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AggMethod::First => "first",
            AggMethod::Last => "last",
            AggMethod::Mean => "mean",
            AggMethod::FirstAndLast => "first_and_last",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == s)
    }
}

/// Which internal tensor the features were dumped from. Aggregation treats
/// both identically; the tag only travels with models as a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FeatureVariant {
    Encoded,
    PreLogits,
    #[default]
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AxisAggregation {
    Token(AggMethod),
    Flow { hori: AggMethod, diff: AggMethod },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AggregationSpec {
    pub axes: AxisAggregation,
    pub feature_variant: FeatureVariant,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self::token(AggMethod::Last)
    }
}

impl AggregationSpec {
    pub fn token(method: AggMethod) -> Self {
        Self {
            axes: AxisAggregation::Token(method),
            feature_variant: FeatureVariant::NotApplicable,
        }
    }

    pub fn flow(hori: AggMethod, diff: AggMethod) -> Self {
        Self {
            axes: AxisAggregation::Flow { hori, diff },
            feature_variant: FeatureVariant::NotApplicable,
        }
    }

    /// Output dimension for a given raw shape, or an error if the axis labels
    /// do not match this spec.
    pub fn output_dim(&self, shape: EmbeddingShape) -> Result<usize> {
        match (self.axes, shape) {
            (AxisAggregation::Token(m), EmbeddingShape::Token { dim, .. }) => Ok(m.width() * dim),
            (AxisAggregation::Flow { hori, diff }, EmbeddingShape::Flow { dim, .. }) => {
                Ok(hori.width() * diff.width() * dim)
            }
            _ => Err(self.mismatch(shape)),
        }
    }

    pub fn apply(&self, raw: &RawEmbedding) -> Result<Vec<f64>> {
        match (self.axes, raw) {
            (AxisAggregation::Token(m), RawEmbedding::Token { n, dim, data }) => {
                aggregate_token_axis(data, *n, *dim, m)
            }
            (
                AxisAggregation::Flow { hori, diff },
                RawEmbedding::Flow {
                    horizon,
                    diff: k,
                    dim,
                    data,
                },
            ) => aggregate_flow_axes(data, *horizon, *k, *dim, hori, diff),
            _ => Err(self.mismatch(raw.shape())),
        }
    }

    fn mismatch(&self, shape: EmbeddingShape) -> Error {
        Error::InvalidArgument(alloc::format!(
            "aggregation {:?} does not match embedding axes {:?}",
            self.axes,
            shape
        ))
    }
}

/// Reduces `count` consecutive blocks of `width` values, `data[i*width..]`.
fn reduce_blocks(data: &[f64], count: usize, width: usize, method: AggMethod) -> Vec<f64> {
    let block = |i: usize| &data[i * width..(i + 1) * width];
    match method {
        AggMethod::First => block(0).to_vec(),
        AggMethod::Last => block(count - 1).to_vec(),
        AggMethod::Mean => {
            let mut out = alloc::vec![0.0; width];
            for i in 0..count {
                crate::linalg::axpy(1.0, block(i), &mut out);
            }
            let n = count as f64;
            out.iter_mut().for_each(|v| *v /= n);
            out
        }
        AggMethod::FirstAndLast => {
            let mut out = block(0).to_vec();
            out.extend_from_slice(block(count - 1));
            out
        }
    }
}

/// Reduces an `n x dim` row-major matrix along its token axis.
pub fn aggregate_token_axis(data: &[f64], n: usize, dim: usize, method: AggMethod) -> Result<Vec<f64>> {
    if n == 0 || dim == 0 {
        return Err(Error::Empty("token embedding matrix"));
    }
    if data.len() != n * dim {
        return Err(Error::DimensionMismatch {
            expected: n * dim,
            got: data.len(),
        });
    }
    Ok(reduce_blocks(data, n, dim, method))
}

/// Reduces an `H x k x dim` row-major tensor: `diff` along `k`, then `hori`
/// along `H`.
pub fn aggregate_flow_axes(
    data: &[f64],
    horizon: usize,
    diff_steps: usize,
    dim: usize,
    hori: AggMethod,
    diff: AggMethod,
) -> Result<Vec<f64>> {
    if horizon == 0 || diff_steps == 0 || dim == 0 {
        return Err(Error::Empty("flow embedding tensor"));
    }
    if data.len() != horizon * diff_steps * dim {
        return Err(Error::DimensionMismatch {
            expected: horizon * diff_steps * dim,
            got: data.len(),
        });
    }
    let per_h = diff_steps * dim;
    let mut reduced = Vec::with_capacity(horizon * diff.width() * dim);
    for h in 0..horizon {
        reduced.extend(reduce_blocks(&data[h * per_h..(h + 1) * per_h], diff_steps, dim, diff));
    }
    Ok(reduce_blocks(&reduced, horizon, diff.width() * dim, hori))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const E: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

    #[test]
    fn token_methods() {
        assert_eq!(aggregate_token_axis(&E, 2, 2, AggMethod::Mean).unwrap(), [2.0, 3.0]);
        assert_eq!(aggregate_token_axis(&E, 2, 2, AggMethod::First).unwrap(), [1.0, 2.0]);
        assert_eq!(aggregate_token_axis(&E, 2, 2, AggMethod::Last).unwrap(), [3.0, 4.0]);
        assert_eq!(
            aggregate_token_axis(&E, 2, 2, AggMethod::FirstAndLast).unwrap(),
            [1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn single_token_row() {
        for m in [AggMethod::First, AggMethod::Last, AggMethod::Mean] {
            assert_eq!(aggregate_token_axis(&[5.0, 6.0], 1, 2, m).unwrap(), [5.0, 6.0]);
        }
        assert_eq!(
            aggregate_token_axis(&[5.0, 6.0], 1, 2, AggMethod::FirstAndLast).unwrap(),
            [5.0, 6.0, 5.0, 6.0]
        );
    }

    #[test]
    fn empty_inputs_error() {
        assert!(aggregate_token_axis(&[], 0, 2, AggMethod::Mean).is_err());
        assert!(aggregate_flow_axes(&[], 0, 1, 1, AggMethod::Mean, AggMethod::Mean).is_err());
    }

    #[test]
    fn flow_two_stage_reduction() {
        // H=2, k=2, d=1 with rows [[1,2],[3,4]]: Last over k -> [2,4], First over H -> [2]
        let out = aggregate_flow_axes(&E, 2, 2, 1, AggMethod::First, AggMethod::Last).unwrap();
        assert_eq!(out, [2.0]);
    }

    #[test]
    fn flow_singleton_axes_and_constant_tensor() {
        let v = [7.0, 8.0, 9.0];
        for h in [AggMethod::First, AggMethod::Last, AggMethod::Mean] {
            for d in [AggMethod::First, AggMethod::Last, AggMethod::Mean] {
                assert_eq!(aggregate_flow_axes(&v, 1, 1, 3, h, d).unwrap(), v);
            }
        }
        let c = vec![2.5; 3 * 4 * 2];
        assert_eq!(
            aggregate_flow_axes(&c, 3, 4, 2, AggMethod::Mean, AggMethod::Mean).unwrap(),
            [2.5, 2.5]
        );
    }

    #[test]
    fn flow_output_dims_for_all_method_pairs() {
        let (h, k, d) = (3, 2, 5);
        let data: Vec<f64> = (0..h * k * d).map(|i| i as f64).collect();
        let raw = RawEmbedding::flow(h, k, d, data).unwrap();
        for hori in AggMethod::ALL {
            for diff in AggMethod::ALL {
                let spec = AggregationSpec::flow(hori, diff);
                let out = spec.apply(&raw).unwrap();
                assert_eq!(out.len(), hori.width() * diff.width() * d);
                assert_eq!(out.len(), spec.output_dim(raw.shape()).unwrap());
            }
        }
    }

    #[test]
    fn axis_mismatch_is_an_error() {
        let raw = RawEmbedding::token(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(AggregationSpec::flow(AggMethod::Mean, AggMethod::Mean).apply(&raw).is_err());
    }
}
