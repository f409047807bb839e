//! Non-learned failure scores.
//!
//! Every score here is a pure function of one step's recorded data (or of two
//! consecutive steps for the chunk-consistency scores) plus, for embedding
//! distances, an immutable [`ReferenceBank`] built from training rollouts.

mod consistency;
mod distance;
mod stac;
mod token;

pub use consistency::{cluster_entropy, flatten_chunks, total_variation, ActionSubspace, SubspaceName};
pub use distance::{embedding_distance_score, DistanceMetric, GaussianStats, PcaKmeans, ReferenceBank};
pub use stac::{mmd_squared, overlap_vectors, rbf_kernel, stac_score, stac_single_score, DEFAULT_BANDWIDTH};
pub use token::{token_avg_entropy, token_avg_prob, token_max_entropy, token_max_prob};

use crate::trace::ScoreTrace;

/// Replaces a trace's values by their running prefix sums.
pub fn accumulate(trace: &ScoreTrace) -> ScoreTrace {
    let mut acc = 0.0;
    let values = trace
        .values
        .iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect();
    ScoreTrace {
        rollout_id: trace.rollout_id.clone(),
        values,
        method_tag: trace.method_tag.clone(),
    }
}
