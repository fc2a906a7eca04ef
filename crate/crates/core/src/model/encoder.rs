use std::sync::Arc;

use thiserror::Error;

use super::params::{EncoderParams, ModelParams, ModelVars};
use crate::autodiff::{Matrix, MessageGraph, Tape, Var};
use crate::features::{EdgeFeatures, PseudoCoordinates};
use crate::graph::RoadGraph;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("node order does not match the graph at row {row}")]
    NodeOrder { row: usize },
}

/// Message-passing structure of a graph, reusable across epochs.
pub fn message_graph(graph: &RoadGraph) -> Arc<MessageGraph> {
    Arc::new(MessageGraph::new(graph.node_count(), graph.edges().to_vec()))
}

/// Records the encoder on `tape`.
///
/// `input` is `n x 2`, `edge_input` is the `E x 1` normalized edge lengths
/// aligned with `graph.edges`.
pub fn encode_on_tape(
    tape: &mut Tape,
    vars: &ModelVars,
    input: Var,
    graph: &Arc<MessageGraph>,
    edge_input: Var,
) -> Var {
    let g = vars.gate;
    let logits = tape.scalar_mlp(edge_input, g.w1, g.b1, g.w2, g.b2);
    let gate = tape.sigmoid(logits);
    let mut h = input;
    let last = vars.layers.len() - 1;
    for (l, &(w, b)) in vars.layers.iter().enumerate() {
        let agg = tape.gated_aggregate(h, gate, graph);
        let lin = tape.matmul(agg, w);
        h = tape.add_row_broadcast(lin, b);
        if l < last {
            h = tape.relu(h);
        }
    }
    h
}

/// Node embeddings (`n x 32`, rows in `pseudo.node_order`).
pub fn encode(
    graph: &RoadGraph,
    pseudo: &PseudoCoordinates,
    edges: &EdgeFeatures,
    params: &EncoderParams,
) -> Result<Matrix, EncodeError> {
    if pseudo.node_order.len() != graph.node_count() {
        return Err(EncodeError::NodeOrder {
            row: pseudo.node_order.len().min(graph.node_count()),
        });
    }
    for (row, (id, node)) in pseudo.node_order.iter().zip(graph.nodes()).enumerate() {
        if *id != node.id {
            return Err(EncodeError::NodeOrder { row });
        }
    }
    Ok(encode_matrix(graph, &pseudo.coords, &edges.normalized(), params))
}

/// Encoder forward pass on an arbitrary `n x 2` input.
pub fn encode_matrix(graph: &RoadGraph, input: &Matrix, edge_input: &Matrix, params: &EncoderParams) -> Matrix {
    let full = ModelParams {
        encoder: params.clone(),
        ..ModelParams::init(0)
    };
    let mut tape = Tape::new();
    let vars = full.to_tape(&mut tape, None);
    let x = tape.constant(input.clone());
    let e = tape.constant(edge_input.clone());
    let h = encode_on_tape(&mut tape, &vars, x, &message_graph(graph), e);
    tape.value(h).clone()
}
