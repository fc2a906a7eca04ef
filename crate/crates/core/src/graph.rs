//! Road-network graph model.
//!
//! A [`RoadGraph`] is an undirected simple graph whose nodes carry WGS84
//! positions and whose edges are exactly the consecutive pairs of its roads.
//! Node storage order is significant: it fixes the row order of every
//! per-node matrix built downstream (pseudo coordinates, embeddings,
//! similarity rows).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::BoundingBox;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RoadId(pub String);

macro_rules! string_id {
    ($ty:ident) => {
        impl $ty {
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $ty {
            fn from(s: &str) -> Self {
                $ty(s.to_owned())
            }
        }

        impl From<String> for $ty {
            fn from(s: String) -> Self {
                $ty(s)
            }
        }
    };
}

string_id!(NodeId);
string_id!(RoadId);

#[derive(Clone, Debug, PartialEq)]
pub struct GeoNode {
    pub id: NodeId,
    pub lat: f64,
    pub lon: f64,
}

/// An ordered node sequence with its identifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Road {
    pub id: RoadId,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("node {node} has coordinates outside WGS84 range (lat {lat}, lon {lon})")]
    InvalidCoordinate { node: NodeId, lat: f64, lon: f64 },
    #[error("node {0} declared twice with different coordinates")]
    ConflictingNode(NodeId),
    #[error("road {road} references missing node {node}")]
    MissingNode { road: RoadId, node: NodeId },
    #[error("road {0} has fewer than 2 distinct consecutive nodes")]
    ShortRoad(RoadId),
    #[error("road id {0} used more than once")]
    DuplicateRoad(RoadId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
}

/// Incremental constructor; validation happens in [`RoadGraphBuilder::build`].
#[derive(Debug, Default)]
pub struct RoadGraphBuilder {
    nodes: Vec<GeoNode>,
    index: HashMap<NodeId, usize>,
    roads: Vec<Road>,
}

impl RoadGraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a node, or accepts a repeat declaration with identical coordinates.
    pub fn add_node(&mut self, id: NodeId, lat: f64, lon: f64) -> Result<usize, GraphError> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GraphError::InvalidCoordinate { node: id, lat, lon });
        }
        if let Some(&i) = self.index.get(&id) {
            let n = &self.nodes[i];
            if n.lat != lat || n.lon != lon {
                return Err(GraphError::ConflictingNode(id));
            }
            return Ok(i);
        }
        let i = self.nodes.len();
        self.index.insert(id.clone(), i);
        self.nodes.push(GeoNode { id, lat, lon });
        Ok(i)
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.index.contains_key(id)
    }

    pub fn add_road(&mut self, id: RoadId, nodes: Vec<NodeId>) {
        self.roads.push(Road { id, nodes });
    }

    pub fn build(self) -> Result<RoadGraph, GraphError> {
        let RoadGraphBuilder { nodes, index, roads } = self;
        let n = nodes.len();
        let mut seen_roads = BTreeSet::new();
        let mut edge_set = BTreeSet::new();
        let mut road_nodes = Vec::with_capacity(roads.len());
        let mut clean_roads = Vec::with_capacity(roads.len());

        for road in roads {
            if !seen_roads.insert(road.id.clone()) {
                return Err(GraphError::DuplicateRoad(road.id));
            }
            let mut seq: Vec<usize> = Vec::with_capacity(road.nodes.len());
            for node in &road.nodes {
                let &i = index.get(node).ok_or_else(|| GraphError::MissingNode {
                    road: road.id.clone(),
                    node: node.clone(),
                })?;
                // Repeated consecutive references would be self-loops.
                if seq.last() != Some(&i) {
                    seq.push(i);
                }
            }
            if seq.len() < 2 {
                return Err(GraphError::ShortRoad(road.id));
            }
            for w in seq.windows(2) {
                edge_set.insert((w[0].min(w[1]), w[0].max(w[1])));
            }
            clean_roads.push(Road {
                id: road.id,
                nodes: seq.iter().map(|&i| nodes[i].id.clone()).collect(),
            });
            road_nodes.push(seq);
        }

        let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
        let mut neighbors = vec![Vec::new(); n];
        for &(a, b) in &edges {
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let mut node_roads = vec![Vec::new(); n];
        for (r, seq) in road_nodes.iter().enumerate() {
            for &i in seq {
                if node_roads[i].last() != Some(&r) {
                    node_roads[i].push(r);
                }
            }
        }

        Ok(RoadGraph {
            nodes,
            index,
            edges,
            neighbors,
            roads: clean_roads,
            road_nodes,
            node_roads,
        })
    }
}

/// Undirected road network. Immutable once built.
#[derive(Clone, Debug)]
pub struct RoadGraph {
    nodes: Vec<GeoNode>,
    index: HashMap<NodeId, usize>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    roads: Vec<Road>,
    road_nodes: Vec<Vec<usize>>,
    node_roads: Vec<Vec<usize>>,
}

impl RoadGraph {
    /// Convenience constructor: one two-node road per edge, named `e0`, `e1`, ...
    pub fn from_edges(
        nodes: &[(&str, f64, f64)],
        edges: &[(&str, &str)],
    ) -> Result<RoadGraph, GraphError> {
        let mut b = RoadGraphBuilder::new();
        for &(id, lat, lon) in nodes {
            b.add_node(id.into(), lat, lon)?;
        }
        for (k, &(u, v)) in edges.iter().enumerate() {
            b.add_road(format!("e{k}").into(), vec![u.into(), v.into()]);
        }
        b.build()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn road_count(&self) -> usize {
        self.roads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes in storage order.
    pub fn nodes(&self) -> &[GeoNode] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &GeoNode {
        &self.nodes[i]
    }

    pub fn index_of(&self, id: &NodeId) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Edges as `(i, j)` storage indices with `i < j`, sorted.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Neighbor indices of node `i`, ascending.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    pub fn roads(&self) -> &[Road] {
        &self.roads
    }

    /// Node storage indices along road `r`.
    pub fn road_nodes(&self, r: usize) -> &[usize] {
        &self.road_nodes[r]
    }

    /// Indices of the roads passing through node `i`, ascending.
    pub fn roads_of(&self, i: usize) -> &[usize] {
        &self.node_roads[i]
    }

    pub fn road_index(&self, id: &RoadId) -> Option<usize> {
        self.roads.iter().position(|r| &r.id == id)
    }

    /// `(lat, lon)` per node in storage order.
    pub fn coordinates(&self) -> Vec<(f64, f64)> {
        self.nodes.iter().map(|n| (n.lat, n.lon)).collect()
    }

    pub fn bbox(&self) -> Option<BoundingBox> {
        BoundingBox::from_points(self.nodes.iter().map(|n| (n.lat, n.lon)))
    }

    /// Mean degree over the closed one-hop neighborhood of the node at index `i`.
    pub fn normalized_degree_at(&self, i: usize) -> f64 {
        let nb = &self.neighbors[i];
        let total: usize = self.degree(i) + nb.iter().map(|&v| self.degree(v)).sum::<usize>();
        total as f64 / (nb.len() + 1) as f64
    }

    pub fn normalized_degree(&self, id: &NodeId) -> Result<f64, GraphError> {
        let i = self
            .index_of(id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))?;
        Ok(self.normalized_degree_at(i))
    }

    /// Normalized degree of every node, in storage order.
    pub fn normalized_degrees(&self) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.normalized_degree_at(i)).collect()
    }

    /// Same topology and identifiers with new coordinates (storage order).
    pub fn with_coordinates(&self, coords: &[(f64, f64)]) -> Result<RoadGraph, GraphError> {
        assert_eq!(coords.len(), self.node_count(), "coordinate count mismatch");
        let mut b = RoadGraphBuilder::new();
        for (node, &(lat, lon)) in self.nodes.iter().zip(coords) {
            b.add_node(node.id.clone(), lat, lon)?;
        }
        for road in &self.roads {
            b.add_road(road.id.clone(), road.nodes.clone());
        }
        b.build()
    }

    /// Subgraph on the nodes at `keep` (storage indices). Kept nodes retain
    /// their relative order. Roads are clipped to their maximal runs of kept
    /// nodes; a road split into several runs yields ids `<id>#1`, `<id>#2`, ...
    pub fn induced_subgraph(&self, keep: &[usize]) -> RoadGraph {
        let mut mask = vec![false; self.node_count()];
        for &i in keep {
            mask[i] = true;
        }
        let mut b = RoadGraphBuilder::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if mask[i] {
                b.add_node(node.id.clone(), node.lat, node.lon)
                    .expect("nodes of a valid graph are valid");
            }
        }
        for (r, road) in self.roads.iter().enumerate() {
            let mut runs: Vec<Vec<NodeId>> = Vec::new();
            let mut current: Vec<NodeId> = Vec::new();
            for &i in &self.road_nodes[r] {
                if mask[i] {
                    current.push(self.nodes[i].id.clone());
                } else if !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
            }
            if !current.is_empty() {
                runs.push(current);
            }
            runs.retain(|run| run.len() >= 2);
            if runs.len() == 1 {
                b.add_road(road.id.clone(), runs.pop().unwrap());
            } else {
                for (k, run) in runs.into_iter().enumerate() {
                    b.add_road(format!("{}#{}", road.id, k + 1).into(), run);
                }
            }
        }
        b.build().expect("clipped roads of a valid graph are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_abc() -> RoadGraph {
        RoadGraph::from_edges(
            &[("a", 0.0, 0.0), ("b", 0.0, 1.0), ("c", 0.0, 2.0)],
            &[("a", "b"), ("b", "c")],
        )
        .unwrap()
    }

    fn k4() -> RoadGraph {
        RoadGraph::from_edges(
            &[("a", 0.0, 0.0), ("b", 0.0, 1.0), ("c", 1.0, 0.0), ("d", 1.0, 1.0)],
            &[("a", "b"), ("a", "c"), ("a", "d"), ("b", "c"), ("b", "d"), ("c", "d")],
        )
        .unwrap()
    }

    #[test]
    fn normalized_degree_hand_values() {
        let g = path_abc();
        assert!((g.normalized_degree(&"b".into()).unwrap() - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(g.normalized_degree(&"a".into()).unwrap(), 1.5);
        let k = k4();
        for id in ["a", "b", "c", "d"] {
            assert_eq!(k.normalized_degree(&id.into()).unwrap(), 3.0);
        }
    }

    #[test]
    fn isolated_node_has_zero_normalized_degree() {
        let mut b = RoadGraphBuilder::new();
        b.add_node("lonely".into(), 1.0, 1.0).unwrap();
        let g = b.build().unwrap();
        assert_eq!(g.normalized_degree(&"lonely".into()).unwrap(), 0.0);
    }

    #[test]
    fn unknown_node_is_an_error() {
        let g = path_abc();
        assert_eq!(
            g.normalized_degree(&"zz".into()),
            Err(GraphError::UnknownNode("zz".into()))
        );
    }

    #[test]
    fn multi_edges_collapse_and_roads_keep_sequences() {
        let mut b = RoadGraphBuilder::new();
        for (id, lon) in [("a", 0.0), ("b", 1.0), ("c", 2.0)] {
            b.add_node(id.into(), 0.0, lon).unwrap();
        }
        b.add_road("r1".into(), vec!["a".into(), "b".into(), "c".into()]);
        b.add_road("r2".into(), vec!["c".into(), "b".into()]);
        let g = b.build().unwrap();
        assert_eq!(g.edge_count(), 2);
        assert_eq!(g.road_count(), 2);
        assert_eq!(g.roads()[1].nodes, vec![NodeId::from("c"), NodeId::from("b")]);
        assert_eq!(g.roads_of(1), &[0, 1]);
        assert_eq!(g.roads_of(0), &[0]);
    }

    #[test]
    fn validation_errors() {
        let mut b = RoadGraphBuilder::new();
        b.add_node("a".into(), 0.0, 0.0).unwrap();
        b.add_road("r".into(), vec!["a".into(), "ghost".into()]);
        assert!(matches!(b.build(), Err(GraphError::MissingNode { .. })));

        let mut b = RoadGraphBuilder::new();
        b.add_node("a".into(), 0.0, 0.0).unwrap();
        b.add_road("r".into(), vec!["a".into(), "a".into()]);
        assert_eq!(b.build().unwrap_err(), GraphError::ShortRoad("r".into()));

        let mut b = RoadGraphBuilder::new();
        b.add_node("a".into(), 0.0, 0.0).unwrap();
        assert_eq!(
            b.add_node("a".into(), 1.0, 0.0).unwrap_err(),
            GraphError::ConflictingNode("a".into())
        );
        assert!(matches!(
            b.add_node("x".into(), 91.0, 0.0),
            Err(GraphError::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn induced_subgraph_clips_roads() {
        let mut b = RoadGraphBuilder::new();
        for (k, id) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            b.add_node((*id).into(), 0.0, k as f64).unwrap();
        }
        b.add_road(
            "long".into(),
            ["a", "b", "c", "d", "e"].iter().map(|s| NodeId::from(*s)).collect(),
        );
        let g = b.build().unwrap();
        let sub = g.induced_subgraph(&[0, 1, 3, 4]);
        assert_eq!(sub.node_count(), 4);
        assert_eq!(sub.edge_count(), 2);
        let ids: Vec<_> = sub.roads().iter().map(|r| r.id.0.clone()).collect();
        assert_eq!(ids, vec!["long#1", "long#2"]);
    }
}
