//! Per-node and per-edge geometric inputs to the encoder.

use crate::autodiff::Matrix;
use crate::geo::{haversine_m, BoundingBox};
use crate::graph::{NodeId, RoadGraph};

/// Node positions min-max normalized into `[0, 1]^2` within a bounding box.
///
/// Column 0 is latitude, column 1 longitude. Rows follow `node_order`.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoCoordinates {
    pub coords: Matrix,
    pub source_bbox: BoundingBox,
    pub node_order: Vec<NodeId>,
}

/// Normalizes `value` into `[0, 1]` over `[lo, hi]`; a collapsed axis maps to 0.5.
fn normalize_axis(value: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((value - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

impl PseudoCoordinates {
    /// Pseudo coordinates over the graph's own envelope.
    ///
    /// Panics on an empty graph.
    pub fn build(graph: &RoadGraph) -> PseudoCoordinates {
        let bbox = graph.bbox().expect("pseudo coordinates need at least one node");
        Self::build_in(graph, bbox)
    }

    /// Pseudo coordinates relative to an externally supplied envelope (used
    /// when source and target share bounds). Positions outside `bbox` clamp
    /// to its edge.
    pub fn build_in(graph: &RoadGraph, bbox: BoundingBox) -> PseudoCoordinates {
        let points = graph.coordinates();
        PseudoCoordinates {
            coords: Self::normalize(&points, &bbox),
            source_bbox: bbox,
            node_order: graph.nodes().iter().map(|n| n.id.clone()).collect(),
        }
    }

    /// Raw `(lat, lon)` rows normalized into `bbox`.
    pub fn normalize(points: &[(f64, f64)], bbox: &BoundingBox) -> Matrix {
        let mut data = Vec::with_capacity(points.len() * 2);
        for &(lat, lon) in points {
            data.push(normalize_axis(lat, bbox.lat_min, bbox.lat_max));
            data.push(normalize_axis(lon, bbox.lon_min, bbox.lon_max));
        }
        Matrix::from_vec(points.len(), 2, data).expect("two columns per point")
    }

    pub fn len(&self) -> usize {
        self.coords.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.rows() == 0
    }
}

/// Raw `[lat, lon]` matrix in storage order; the encoder input when the
/// pseudo-coordinate stage is switched off.
pub fn raw_coordinates(graph: &RoadGraph) -> Matrix {
    let data = graph.nodes().iter().flat_map(|n| [n.lat, n.lon]).collect();
    Matrix::from_vec(graph.node_count(), 2, data).expect("two columns per node")
}

/// Great-circle edge lengths, aligned with [`RoadGraph::edges`].
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeFeatures {
    pub lengths_m: Vec<f64>,
    /// Longest edge of the graph in meters, or 1 when there are no edges
    /// (or every edge has zero length).
    pub scale_m: f64,
}

impl EdgeFeatures {
    pub fn build(graph: &RoadGraph) -> EdgeFeatures {
        let lengths_m: Vec<f64> = graph
            .edges()
            .iter()
            .map(|&(a, b)| {
                let (u, v) = (graph.node(a), graph.node(b));
                haversine_m(u.lat, u.lon, v.lat, v.lon)
            })
            .collect();
        let max = lengths_m.iter().copied().fold(0.0_f64, f64::max);
        let scale_m = if max > 0.0 { max } else { 1.0 };
        EdgeFeatures { lengths_m, scale_m }
    }

    /// Lengths divided by the scale, as an `E x 1` column.
    pub fn normalized(&self) -> Matrix {
        let data = self.lengths_m.iter().map(|l| l / self.scale_m).collect();
        Matrix::from_vec(self.lengths_m.len(), 1, data).expect("column vector")
    }
}
