//! Overlapping k-by-k tiling for large maps: independent per-tile matching
//! and vote-based reconciliation.

use std::cmp::Ordering;

use serde::Serialize;

use crate::geo::BoundingBox;
use crate::graph::RoadGraph;
use crate::matching::{hard_assign, train_prepared, Assignment, MatchError, PairInputs, SimilarityMatrix, TraceEntry, TrainConfig};

pub const DEFAULT_OVERLAP: f64 = 0.2;
pub const DEFAULT_MAX_NODES: usize = 3000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TileSpec {
    pub k: usize,
    pub overlap_ratio: f64,
    pub max_nodes_per_tile: usize,
}

impl TileSpec {
    pub fn new(k: usize, overlap_ratio: f64) -> TileSpec {
        TileSpec {
            k,
            overlap_ratio,
            max_nodes_per_tile: DEFAULT_MAX_NODES,
        }
    }

    /// Smallest grid whose expected tile population stays under
    /// `max_nodes_per_tile` for `nodes` uniformly spread nodes.
    pub fn auto(nodes: usize, overlap_ratio: f64, max_nodes_per_tile: usize) -> TileSpec {
        let grown = nodes as f64 * (1.0 + 2.0 * overlap_ratio).powi(2);
        let k = (grown / max_nodes_per_tile.max(1) as f64).sqrt().ceil().max(1.0) as usize;
        TileSpec {
            k,
            overlap_ratio,
            max_nodes_per_tile,
        }
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if self.k == 0 {
            return Err(MatchError::Config("k must be at least 1".into()));
        }
        if !(self.overlap_ratio > 0.0 && self.overlap_ratio < 0.5) {
            return Err(MatchError::Config(format!(
                "overlap must lie in (0, 0.5), got {}",
                self.overlap_ratio
            )));
        }
        if self.max_nodes_per_tile == 0 {
            return Err(MatchError::Config("max_nodes_per_tile must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tile {
    /// `(row, col)`; row 0 is the southern edge.
    pub index: (usize, usize),
    pub bbox: BoundingBox,
    /// Ascending storage indices into the source graph.
    pub source: Vec<usize>,
    /// Ascending storage indices into the target graph.
    pub target: Vec<usize>,
}

fn split(lo: f64, hi: f64, k: usize, i: usize) -> f64 {
    if i == k {
        hi
    } else {
        lo + (hi - lo) * i as f64 / k as f64
    }
}

fn inside(graph: &RoadGraph, bbox: &BoundingBox) -> Vec<usize> {
    (0..graph.node_count())
        .filter(|&i| {
            let n = graph.node(i);
            bbox.contains(n.lat, n.lon)
        })
        .collect()
}

/// Grid over the union envelope of both maps, each cell grown by the
/// overlap ratio on every side. Tiles with no node on either side are
/// dropped.
pub fn partition(graph_s: &RoadGraph, graph_t: &RoadGraph, spec: &TileSpec) -> Vec<Tile> {
    let Some(union) = (match (graph_s.bbox(), graph_t.bbox()) {
        (Some(a), Some(b)) => Some(a.union(&b)),
        (a, b) => a.or(b),
    }) else {
        return Vec::new();
    };
    let k = spec.k;
    let mut tiles = Vec::with_capacity(k * k);
    for row in 0..k {
        for col in 0..k {
            let cell = BoundingBox {
                lat_min: split(union.lat_min, union.lat_max, k, row),
                lat_max: split(union.lat_min, union.lat_max, k, row + 1),
                lon_min: split(union.lon_min, union.lon_max, k, col),
                lon_max: split(union.lon_min, union.lon_max, k, col + 1),
            };
            let bbox = cell.expanded(spec.overlap_ratio);
            let source = inside(graph_s, &bbox);
            let target = inside(graph_t, &bbox);
            if !source.is_empty() || !target.is_empty() {
                tiles.push(Tile {
                    index: (row, col),
                    bbox,
                    source,
                    target,
                });
            }
        }
    }
    tiles
}

/// Outcome of matching one tile; indices are local to the tile's node lists.
#[derive(Clone, Debug)]
pub struct TileResult {
    pub assignment: Assignment,
    /// Pseudo-coordinate distance of each chosen pair; 0 when unmatched.
    pub distance: Vec<f64>,
    /// `None` when the tile has an empty side and was not trained.
    pub similarity: Option<SimilarityMatrix>,
    pub trace: Vec<TraceEntry>,
}

fn match_tile(graph_s: &RoadGraph, graph_t: &RoadGraph, tile: &Tile, cfg: &TrainConfig) -> Result<TileResult, MatchError> {
    if tile.source.is_empty() || tile.target.is_empty() {
        return Ok(TileResult {
            assignment: Assignment::unmatched(tile.source.len()),
            distance: vec![0.0; tile.source.len()],
            similarity: None,
            trace: Vec::new(),
        });
    }
    let sub_s = graph_s.induced_subgraph(&tile.source);
    let sub_t = graph_t.induced_subgraph(&tile.target);
    let inputs = PairInputs::prepare(&sub_s, &sub_t, cfg)?;
    let outcome = train_prepared(&inputs, cfg)?;
    let assignment = hard_assign(&outcome.similarity.s);
    let distance = assignment
        .targets
        .iter()
        .enumerate()
        .map(|(u, t)| t.map_or(0.0, |v| inputs.d.get(u, v)))
        .collect();
    log::info!(
        "tile {:?}: {}x{} nodes, final loss {:.6}",
        tile.index,
        tile.source.len(),
        tile.target.len(),
        outcome.final_loss()
    );
    Ok(TileResult {
        assignment,
        distance,
        similarity: Some(outcome.similarity),
        trace: outcome.trace,
    })
}

/// Trains every tile on a pool of `workers` threads. Each tile gets pseudo
/// coordinates over its own nodes and the same seed; results come back in
/// tile order whatever the scheduling.
pub fn match_tiles(
    graph_s: &RoadGraph,
    graph_t: &RoadGraph,
    tiles: &[Tile],
    cfg: &TrainConfig,
    workers: usize,
) -> Result<Vec<TileResult>, MatchError> {
    use rayon::prelude::*;
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| MatchError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        tiles
            .par_iter()
            .map(|tile| match_tile(graph_s, graph_t, tile, cfg))
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub target: usize,
    /// Summed confidence over the tiles proposing this target.
    pub probability: f64,
    /// Smallest pseudo-coordinate distance among those tiles.
    pub distance: f64,
    pub tiles: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VoteTable {
    /// Per source node, candidates in order of first proposal.
    pub candidates: Vec<Vec<Candidate>>,
    /// Number of tiles containing each source node.
    pub coverage: Vec<usize>,
}

impl VoteTable {
    /// Collects proposals in tile order.
    pub fn build(source_nodes: usize, tiles: &[Tile], results: &[TileResult]) -> VoteTable {
        let mut table = VoteTable {
            candidates: vec![Vec::new(); source_nodes],
            coverage: vec![0; source_nodes],
        };
        for (k, (tile, res)) in tiles.iter().zip(results).enumerate() {
            for (local, &u) in tile.source.iter().enumerate() {
                table.coverage[u] += 1;
                if let Some(lv) = res.assignment.targets[local] {
                    table.propose(u, tile.target[lv], res.assignment.confidence[local], res.distance[local], k);
                }
            }
        }
        table
    }

    pub fn propose(&mut self, source: usize, target: usize, probability: f64, distance: f64, tile: usize) {
        let list = &mut self.candidates[source];
        match list.iter_mut().find(|c| c.target == target) {
            Some(c) => {
                c.probability += probability;
                c.distance = c.distance.min(distance);
                c.tiles.push(tile);
            }
            None => list.push(Candidate {
                target,
                probability,
                distance,
                tiles: vec![tile],
            }),
        }
    }
}

/// Higher probability first, then smaller distance, then lower target.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.probability
        .total_cmp(&a.probability)
        .then(a.distance.total_cmp(&b.distance))
        .then(a.target.cmp(&b.target))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VoteOutcome {
    /// Confidence is the winning aggregated probability divided by the
    /// number of tiles containing the source node.
    pub assignment: Assignment,
    /// Source nodes with more than one distinct candidate.
    pub conflicts: usize,
    /// Source nodes whose winner was already taken by a stronger vote.
    pub rejected: usize,
}

/// Picks each node's best candidate, then accepts winners greedily in
/// descending probability so no target is used twice.
pub fn vote(table: &VoteTable) -> VoteOutcome {
    let n = table.candidates.len();
    let best: Vec<Option<&Candidate>> = table.candidates.iter().map(|c| c.iter().min_by(|a, b| rank(a, b))).collect();
    let mut order: Vec<usize> = (0..n).filter(|&u| best[u].is_some()).collect();
    order.sort_by(|&a, &b| rank(best[a].unwrap(), best[b].unwrap()).then(a.cmp(&b)));

    let mut assignment = Assignment::unmatched(n);
    let mut taken = std::collections::HashSet::new();
    let mut rejected = 0;
    for u in order {
        let c = best[u].unwrap();
        if taken.insert(c.target) {
            assignment.targets[u] = Some(c.target);
            assignment.confidence[u] = c.probability / table.coverage[u].max(1) as f64;
        } else {
            rejected += 1;
        }
    }
    VoteOutcome {
        assignment,
        conflicts: table.candidates.iter().filter(|c| c.len() > 1).count(),
        rejected,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TileDiagnostic {
    pub index: (usize, usize),
    pub bbox: BoundingBox,
    pub source_nodes: usize,
    pub target_nodes: usize,
    pub matched: usize,
    pub final_loss: Option<f64>,
    pub final_alpha: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TilingDiagnostics {
    pub spec: TileSpec,
    pub tiles: Vec<TileDiagnostic>,
    pub vote_conflicts: usize,
    pub vote_rejected: usize,
    pub matched: usize,
    pub unmatched: usize,
}

impl TilingDiagnostics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

#[derive(Clone, Debug)]
pub struct TiledMatch {
    pub assignment: Assignment,
    pub tiles: Vec<Tile>,
    pub results: Vec<TileResult>,
    pub table: VoteTable,
    pub diagnostics: TilingDiagnostics,
}

impl TiledMatch {
    /// Per epoch: loss summed over trained tiles and mean fusion weight.
    pub fn combined_trace(&self) -> Vec<TraceEntry> {
        let traced: Vec<&Vec<TraceEntry>> = self.results.iter().map(|r| &r.trace).filter(|t| !t.is_empty()).collect();
        let Some(first) = traced.first() else {
            return Vec::new();
        };
        (0..first.len())
            .map(|e| TraceEntry {
                epoch: first[e].epoch,
                loss: traced.iter().map(|t| t[e].loss).sum(),
                alpha: traced.iter().map(|t| t[e].alpha).sum::<f64>() / traced.len() as f64,
            })
            .collect()
    }
}

/// Partition, per-tile matching and voting.
pub fn tile_match(
    graph_s: &RoadGraph,
    graph_t: &RoadGraph,
    spec: &TileSpec,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<TiledMatch, MatchError> {
    spec.validate()?;
    if graph_s.is_empty() {
        return Err(MatchError::EmptyGraph("source"));
    }
    if graph_t.is_empty() {
        return Err(MatchError::EmptyGraph("target"));
    }
    let tiles = partition(graph_s, graph_t, spec);
    let results = match_tiles(graph_s, graph_t, &tiles, cfg, workers)?;
    let table = VoteTable::build(graph_s.node_count(), &tiles, &results);
    let outcome = vote(&table);
    let matched = outcome.assignment.matched_count();
    let diagnostics = TilingDiagnostics {
        spec: *spec,
        tiles: tiles
            .iter()
            .zip(&results)
            .map(|(t, r)| TileDiagnostic {
                index: t.index,
                bbox: t.bbox,
                source_nodes: t.source.len(),
                target_nodes: t.target.len(),
                matched: r.assignment.matched_count(),
                final_loss: r.trace.last().map(|e| e.loss),
                final_alpha: r.trace.last().map(|e| e.alpha),
            })
            .collect(),
        vote_conflicts: outcome.conflicts,
        vote_rejected: outcome.rejected,
        matched,
        unmatched: graph_s.node_count() - matched,
    };
    Ok(TiledMatch {
        assignment: outcome.assignment,
        tiles,
        results,
        table,
        diagnostics,
    })
}
