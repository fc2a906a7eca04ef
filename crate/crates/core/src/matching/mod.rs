//! Similarity fusion, Sinkhorn normalization, the unsupervised loss,
//! training and hard assignment.

mod assign;
mod hungarian;
mod loss;
mod similarity;
mod sinkhorn;
mod train;

pub use assign::{hard_assign, lift_roads, write_correspondences, write_loss_trace, Assignment, RoadMatch};
pub use hungarian::{assignment_cost, hungarian};
pub use loss::{loss, loss_on_tape};
pub use similarity::{feature_similarity, pairwise_distance, struct_diff, WidthMismatch};
pub use sinkhorn::{sinkhorn, sinkhorn_on_tape, SinkhornOutput, SinkhornVars, DEFAULT_ITERS};
pub use train::{
    evaluate_loss, forward_on_tape, fuse, fuse_on_tape, loss_and_gradients, train_pair, train_prepared, ForwardVars,
    MatchError, PairInputs, SimilarityMatrix, TraceEntry, TrainConfig, TrainOutcome,
};

use crate::graph::RoadGraph;

/// Untiled pipeline output.
#[derive(Clone, Debug)]
pub struct MatchResult {
    pub assignment: Assignment,
    pub roads: Vec<RoadMatch>,
    pub outcome: TrainOutcome,
}

/// Trains on the pair and extracts the hard assignment.
pub fn match_graphs(graph_s: &RoadGraph, graph_t: &RoadGraph, cfg: &TrainConfig) -> Result<MatchResult, MatchError> {
    let outcome = train_pair(graph_s, graph_t, cfg)?;
    let assignment = hard_assign(&outcome.similarity.s);
    let roads = lift_roads(&assignment, graph_s, graph_t);
    Ok(MatchResult {
        assignment,
        roads,
        outcome,
    })
}
