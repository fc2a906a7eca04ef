use std::collections::BTreeMap;
use std::io::Write;

use super::hungarian::hungarian;
use super::train::TraceEntry;
use crate::autodiff::Matrix;
use crate::graph::{NodeId, RoadGraph, RoadId};

/// Hard node correspondence indexed by source storage position.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub targets: Vec<Option<usize>>,
    /// The similarity entry of each chosen pair; 0 for unmatched sources.
    pub confidence: Vec<f64>,
}

impl Assignment {
    pub fn unmatched(n: usize) -> Assignment {
        Assignment {
            targets: vec![None; n],
            confidence: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn matched_count(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// True when no target is used twice.
    pub fn is_injective(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.targets.iter().flatten().all(|t| seen.insert(*t))
    }

    /// `(source id, target id, confidence)` rows in source storage order.
    pub fn to_id_pairs(&self, graph_s: &RoadGraph, graph_t: &RoadGraph) -> Vec<(NodeId, Option<NodeId>, f64)> {
        self.targets
            .iter()
            .enumerate()
            .map(|(u, t)| {
                (
                    graph_s.node(u).id.clone(),
                    t.map(|v| graph_t.node(v).id.clone()),
                    self.confidence[u],
                )
            })
            .collect()
    }
}

/// Hungarian on `1 - S`; sources left on padding columns stay unmatched.
pub fn hard_assign(s: &Matrix) -> Assignment {
    let cost = s.map(|x| 1.0 - x);
    let targets = hungarian(&cost);
    let confidence = targets
        .iter()
        .enumerate()
        .map(|(u, t)| t.map_or(0.0, |v| s.get(u, v)))
        .collect();
    Assignment { targets, confidence }
}

/// Road-level correspondence derived from node matches.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadMatch {
    pub source: RoadId,
    pub target: RoadId,
    /// Source nodes of the road whose match lies on the target road.
    pub support: usize,
}

/// For each source road, the target road sharing the most matched nodes
/// (ties to the lowest target road position). Roads without matched nodes
/// are omitted.
pub fn lift_roads(assignment: &Assignment, graph_s: &RoadGraph, graph_t: &RoadGraph) -> Vec<RoadMatch> {
    let mut out = Vec::new();
    for (r, road) in graph_s.roads().iter().enumerate() {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for &u in graph_s.road_nodes(r) {
            if let Some(v) = assignment.targets[u] {
                for &tr in graph_t.roads_of(v) {
                    *votes.entry(tr).or_default() += 1;
                }
            }
        }
        let best = votes.iter().fold(None, |best: Option<(usize, usize)>, (&tr, &c)| match best {
            Some((_, bc)) if bc >= c => best,
            _ => Some((tr, c)),
        });
        if let Some((tr, support)) = best {
            out.push(RoadMatch {
                source: road.id.clone(),
                target: graph_t.roads()[tr].id.clone(),
                support,
            });
        }
    }
    out
}

/// Writes `src_node_id,dst_node_id,confidence`, one row per source node.
pub fn write_correspondences<W: Write>(
    writer: W,
    assignment: &Assignment,
    graph_s: &RoadGraph,
    graph_t: &RoadGraph,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["src_node_id", "dst_node_id", "confidence"])?;
    for (src, dst, conf) in assignment.to_id_pairs(graph_s, graph_t) {
        let dst = dst.map(|d| d.to_string()).unwrap_or_default();
        w.write_record([src.as_str(), dst.as_str(), &format!("{conf}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `epoch,loss,alpha`.
pub fn write_loss_trace<W: Write>(writer: W, trace: &[TraceEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "loss", "alpha"])?;
    for e in trace {
        w.write_record([e.epoch.to_string(), format!("{}", e.loss), format!("{}", e.alpha)])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(prefix: &str, n: usize) -> RoadGraph {
        let ids: Vec<String> = (0..n).map(|k| format!("{prefix}{k}")).collect();
        let nodes: Vec<(&str, f64, f64)> = ids.iter().enumerate().map(|(k, id)| (id.as_str(), 0.0, k as f64 * 0.001)).collect();
        let edges: Vec<(&str, &str)> = (1..n).map(|k| (ids[k - 1].as_str(), ids[k].as_str())).collect();
        RoadGraph::from_edges(&nodes, &edges).unwrap()
    }

    #[test]
    fn identity_similarity() {
        let a = hard_assign(&Matrix::identity(4));
        assert_eq!(a.targets, (0..4).map(Some).collect::<Vec<_>>());
        assert_eq!(a.confidence, vec![1.0; 4]);
    }

    #[test]
    fn uniform_two_by_two() {
        let a = hard_assign(&Matrix::filled(2, 2, 0.5));
        assert_eq!(a.targets, vec![Some(0), Some(1)]);
        assert_eq!(a.confidence, vec![0.5, 0.5]);
    }

    #[test]
    fn pigeonhole_leaves_one_source_unmatched() {
        let s = Matrix::from_rows(&[[0.6, 0.1], [0.2, 0.7], [0.2, 0.2]]);
        let a = hard_assign(&s);
        assert_eq!(a.targets, vec![Some(0), Some(1), None]);
        assert_eq!(a.confidence[2], 0.0);
        assert!(a.is_injective());
    }

    #[test]
    fn csv_export_and_road_lifting() {
        let gs = path("s", 3);
        let gt = path("t", 2);
        let a = Assignment {
            targets: vec![Some(0), Some(1), None],
            confidence: vec![0.5, 0.25, 0.0],
        };
        let mut buf = Vec::new();
        write_correspondences(&mut buf, &a, &gs, &gt).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "src_node_id,dst_node_id,confidence\ns0,t0,0.5\ns1,t1,0.25\ns2,,0\n"
        );
        let roads = lift_roads(&a, &gs, &gt);
        assert_eq!(roads[0], RoadMatch { source: "e0".into(), target: "e0".into(), support: 2 });
        assert_eq!(roads[1].support, 1);
    }

    #[test]
    fn trace_export() {
        let mut buf = Vec::new();
        let trace = [TraceEntry { epoch: 0, loss: 1.5, alpha: 0.5 }];
        write_loss_trace(&mut buf, &trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss,alpha\n0,1.5,0.5\n");
    }
}
