//! Road-level matching accuracy against ground truth.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{NodeId, RoadGraph, RoadId};
use crate::matching::Assignment;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ground truth references unknown source road {0}")]
    UnknownSourceRoad(RoadId),
    #[error("ground truth references unknown target road {0}")]
    UnknownTargetRoad(RoadId),
    #[error("unknown source node {0}")]
    UnknownSourceNode(NodeId),
    #[error("unknown target node {0}")]
    UnknownTargetNode(NodeId),
    #[error("assignment covers {got} source nodes, graph has {expected}")]
    AssignmentSize { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0}")]
    MissingColumn(&'static str),
}

/// Correspondence oracle: road pairs, optionally with the node pairs they
/// were derived from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroundTruth {
    pub road_pairs: BTreeSet<(RoadId, RoadId)>,
    pub node_pairs: Option<Vec<(NodeId, NodeId)>>,
}

impl GroundTruth {
    pub fn from_road_pairs(pairs: impl IntoIterator<Item = (RoadId, RoadId)>) -> GroundTruth {
        GroundTruth {
            road_pairs: pairs.into_iter().collect(),
            node_pairs: None,
        }
    }

    /// Every road of `graph` paired with itself, and every node likewise.
    pub fn identity(graph: &RoadGraph) -> GroundTruth {
        GroundTruth {
            road_pairs: graph.roads().iter().map(|r| (r.id.clone(), r.id.clone())).collect(),
            node_pairs: Some(graph.nodes().iter().map(|n| (n.id.clone(), n.id.clone())).collect()),
        }
    }

    /// Derives road pairs from node pairs: a source road pairs with every
    /// target road that contains the images of all its nodes. Source roads
    /// with an unmapped node get no pair.
    pub fn from_node_pairs(
        pairs: Vec<(NodeId, NodeId)>,
        graph_s: &RoadGraph,
        graph_t: &RoadGraph,
    ) -> Result<GroundTruth, EvalError> {
        let mut image: HashMap<usize, usize> = HashMap::with_capacity(pairs.len());
        for (a, b) in &pairs {
            let u = graph_s
                .index_of(a)
                .ok_or_else(|| EvalError::UnknownSourceNode(a.clone()))?;
            let v = graph_t
                .index_of(b)
                .ok_or_else(|| EvalError::UnknownTargetNode(b.clone()))?;
            image.insert(u, v);
        }
        let mut road_pairs = BTreeSet::new();
        for (r, road) in graph_s.roads().iter().enumerate() {
            let Some(mapped) = graph_s
                .road_nodes(r)
                .iter()
                .map(|u| image.get(u).copied())
                .collect::<Option<Vec<usize>>>()
            else {
                continue;
            };
            for &tr in graph_t.roads_of(mapped[0]) {
                let members: HashSet<usize> = graph_t.road_nodes(tr).iter().copied().collect();
                if mapped.iter().all(|v| members.contains(v)) {
                    road_pairs.insert((road.id.clone(), graph_t.roads()[tr].id.clone()));
                }
            }
        }
        Ok(GroundTruth {
            road_pairs,
            node_pairs: Some(pairs),
        })
    }

    /// Checks that every referenced road exists.
    pub fn validate(&self, graph_s: &RoadGraph, graph_t: &RoadGraph) -> Result<(), EvalError> {
        for (a, b) in &self.road_pairs {
            if graph_s.road_index(a).is_none() {
                return Err(EvalError::UnknownSourceRoad(a.clone()));
            }
            if graph_t.road_index(b).is_none() {
                return Err(EvalError::UnknownTargetRoad(b.clone()));
            }
        }
        Ok(())
    }

    /// Writes `src_road_id,dst_road_id`.
    pub fn write_road_csv(&self, writer: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["src_road_id", "dst_road_id"])?;
        for (a, b) in &self.road_pairs {
            w.write_record([a.as_str(), b.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `src_node_id,dst_node_id`; nothing beyond the header when no
    /// node pairs are known.
    pub fn write_node_csv(&self, writer: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["src_node_id", "dst_node_id"])?;
        for (a, b) in self.node_pairs.iter().flatten() {
            w.write_record([a.as_str(), b.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_road_csv(reader: impl Read) -> Result<GroundTruth, EvalError> {
        let pairs = read_pairs(reader, "src_road_id", "dst_road_id")?;
        Ok(GroundTruth::from_road_pairs(
            pairs.into_iter().map(|(a, b)| (RoadId::from(a), RoadId::from(b))),
        ))
    }

    pub fn read_node_csv(
        reader: impl Read,
        graph_s: &RoadGraph,
        graph_t: &RoadGraph,
    ) -> Result<GroundTruth, EvalError> {
        let pairs = read_pairs(reader, "src_node_id", "dst_node_id")?;
        GroundTruth::from_node_pairs(
            pairs.into_iter().map(|(a, b)| (NodeId::from(a), NodeId::from(b))).collect(),
            graph_s,
            graph_t,
        )
    }
}

fn column(headers: &csv::StringRecord, name: &'static str) -> Result<usize, EvalError> {
    headers.iter().position(|h| h == name).ok_or(EvalError::MissingColumn(name))
}

fn read_pairs(reader: impl Read, a: &'static str, b: &'static str) -> Result<Vec<(String, String)>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ia, ib) = (column(&headers, a)?, column(&headers, b)?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.push((rec[ia].to_string(), rec[ib].to_string()));
    }
    Ok(out)
}

/// Reads `src_node_id,dst_node_id[,confidence]` rows into an assignment over
/// `graph_s`. Missing sources and empty targets are unmatched.
pub fn read_correspondences(
    reader: impl Read,
    graph_s: &RoadGraph,
    graph_t: &RoadGraph,
) -> Result<Assignment, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let (ia, ib) = (column(&headers, "src_node_id")?, column(&headers, "dst_node_id")?);
    let ic = headers.iter().position(|h| h == "confidence");
    let mut out = Assignment::unmatched(graph_s.node_count());
    for rec in rdr.records() {
        let rec = rec?;
        let src = NodeId::from(&rec[ia]);
        let u = graph_s.index_of(&src).ok_or(EvalError::UnknownSourceNode(src))?;
        if rec[ib].is_empty() {
            continue;
        }
        let dst = NodeId::from(&rec[ib]);
        let v = graph_t.index_of(&dst).ok_or(EvalError::UnknownTargetNode(dst))?;
        out.targets[u] = Some(v);
        out.confidence[u] = ic.and_then(|i| rec.get(i)?.parse().ok()).unwrap_or(1.0);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoadBreakdown {
    pub road_id: String,
    /// Nodes of the road that were evaluated.
    pub evaluated: usize,
    pub correct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub evaluated_nodes: usize,
    pub correct_nodes: usize,
    pub excluded_nodes: usize,
    /// Evaluated nodes left without a match; counted as incorrect.
    pub unmatched_nodes: usize,
    pub per_road: Vec<RoadBreakdown>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        format!(
            "accuracy {:.2}% ({} of {} evaluated nodes correct, {} unmatched, {} excluded)",
            100.0 * self.accuracy,
            self.correct_nodes,
            self.evaluated_nodes,
            self.unmatched_nodes,
            self.excluded_nodes
        )
    }
}

/// Node-level road accuracy. A source node is excluded when none of its roads
/// has a ground-truth counterpart; otherwise it is correct when some pair of
/// its roads and its match's roads is in the ground truth. With nothing to
/// evaluate the accuracy is 1.
pub fn road_accuracy(
    assignment: &Assignment,
    graph_s: &RoadGraph,
    graph_t: &RoadGraph,
    gt: &GroundTruth,
) -> Result<EvalReport, EvalError> {
    if assignment.len() != graph_s.node_count() {
        return Err(EvalError::AssignmentSize {
            expected: graph_s.node_count(),
            got: assignment.len(),
        });
    }
    gt.validate(graph_s, graph_t)?;
    let mut pairs: HashSet<(usize, usize)> = HashSet::with_capacity(gt.road_pairs.len());
    let mut has_counterpart = vec![false; graph_s.road_count()];
    for (a, b) in &gt.road_pairs {
        let (ra, rb) = (graph_s.road_index(a).unwrap(), graph_t.road_index(b).unwrap());
        pairs.insert((ra, rb));
        has_counterpart[ra] = true;
    }

    let mut per_road: Vec<RoadBreakdown> = graph_s
        .roads()
        .iter()
        .map(|r| RoadBreakdown {
            road_id: r.id.to_string(),
            evaluated: 0,
            correct: 0,
        })
        .collect();
    let (mut evaluated, mut correct, mut excluded, mut unmatched) = (0, 0, 0, 0);
    for u in 0..graph_s.node_count() {
        let roads_u = graph_s.roads_of(u);
        if !roads_u.iter().any(|&r| has_counterpart[r]) {
            excluded += 1;
            continue;
        }
        evaluated += 1;
        let ok = match assignment.targets[u] {
            None => {
                unmatched += 1;
                false
            }
            Some(v) => roads_u
                .iter()
                .any(|&ra| graph_t.roads_of(v).iter().any(|&rb| pairs.contains(&(ra, rb)))),
        };
        correct += usize::from(ok);
        for &r in roads_u {
            per_road[r].evaluated += 1;
            per_road[r].correct += usize::from(ok);
        }
    }
    let accuracy = if evaluated == 0 {
        1.0
    } else {
        correct as f64 / evaluated as f64
    };
    Ok(EvalReport {
        accuracy,
        evaluated_nodes: evaluated,
        correct_nodes: correct,
        excluded_nodes: excluded,
        unmatched_nodes: unmatched,
        per_road,
    })
}
