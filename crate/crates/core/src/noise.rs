//! Synthetic benchmark construction: Gaussian coordinate noise and node
//! shuffles with exact ground truth.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::eval::GroundTruth;
use crate::geo::meters_to_degrees;
use crate::graph::{GeoNode, NodeId, Road, RoadGraph, RoadGraphBuilder};

/// Base GPS noise standard deviation in meters.
pub const BASE_SIGMA_M: f64 = 4.07;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseLevel {
    Low,
    Medium,
    High,
    Multiplier(f64),
}

impl NoiseLevel {
    pub fn multiplier(self) -> f64 {
        match self {
            NoiseLevel::Low => 1.0,
            NoiseLevel::Medium => 5.0,
            NoiseLevel::High => 10.0,
            NoiseLevel::Multiplier(m) => m,
        }
    }
}

impl std::str::FromStr for NoiseLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low" => Ok(NoiseLevel::Low),
            "medium" => Ok(NoiseLevel::Medium),
            "high" => Ok(NoiseLevel::High),
            other => match other.parse::<f64>() {
                Ok(m) if m.is_finite() && m >= 0.0 => Ok(NoiseLevel::Multiplier(m)),
                _ => Err(format!(
                    "invalid noise level {other:?} (expected low, medium, high or a non-negative multiplier)"
                )),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub sigma_meters: f64,
    pub level: NoiseLevel,
    pub seed: u64,
}

impl NoiseConfig {
    pub fn new(level: NoiseLevel, seed: u64) -> NoiseConfig {
        NoiseConfig {
            sigma_meters: BASE_SIGMA_M,
            level,
            seed,
        }
    }

    /// Standard deviation actually applied, in meters.
    pub fn effective_sigma(&self) -> f64 {
        self.sigma_meters * self.level.multiplier()
    }
}

/// Per-node `(north, east)` offsets in meters, drawn in storage order.
pub fn draw_offsets(n: usize, sigma: f64, seed: u64) -> Vec<(f64, f64)> {
    if sigma == 0.0 {
        return vec![(0.0, 0.0); n];
    }
    let normal = Normal::new(0.0, sigma).expect("finite non-negative sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let north = normal.sample(&mut rng);
            let east = normal.sample(&mut rng);
            (north, east)
        })
        .collect()
}

/// Displaces every node by independent Gaussian north and east offsets.
/// Topology, ids and road ids are unchanged.
pub fn perturb(graph: &RoadGraph, cfg: &NoiseConfig) -> RoadGraph {
    let sigma = cfg.effective_sigma();
    assert!(sigma.is_finite() && sigma >= 0.0, "noise sigma must be finite and non-negative");
    let offsets = draw_offsets(graph.node_count(), sigma, cfg.seed);
    let coords: Vec<(f64, f64)> = graph
        .nodes()
        .iter()
        .zip(&offsets)
        .map(|(n, &(north, east))| {
            let (dlat, dlon) = meters_to_degrees(north, east, n.lat);
            (n.lat + dlat, n.lon + dlon)
        })
        .collect();
    graph
        .with_coordinates(&coords)
        .expect("perturbed coordinates stay valid")
}

/// Old-to-new node relabeling produced by [`shuffle_nodes`].
#[derive(Clone, Debug, PartialEq)]
pub struct ShuffleRecord {
    /// `(old id, new id)` in the original storage order.
    pub mapping: Vec<(NodeId, NodeId)>,
    /// `position[i]` is the storage index in the shuffled graph of original
    /// node `i`.
    pub position: Vec<usize>,
}

impl ShuffleRecord {
    /// The `(new id, old id)` record.
    pub fn inverse(&self) -> ShuffleRecord {
        let n = self.position.len();
        let mut mapping = vec![(NodeId::from(""), NodeId::from("")); n];
        let mut position = vec![0; n];
        for (i, (old, new)) in self.mapping.iter().enumerate() {
            let j = self.position[i];
            mapping[j] = (new.clone(), old.clone());
            position[j] = i;
        }
        ShuffleRecord { mapping, position }
    }

    /// Node ground truth from the original graph to the shuffled one, with
    /// road pairs derived through road membership.
    pub fn ground_truth(&self, original: &RoadGraph, shuffled: &RoadGraph) -> GroundTruth {
        GroundTruth::from_node_pairs(self.mapping.clone(), original, shuffled)
            .expect("shuffle preserves topology")
    }
}

/// Permutes node identifiers and storage order independently and uniformly
/// at random. Coordinates, topology and road ids are preserved.
pub fn shuffle_nodes(graph: &RoadGraph, seed: u64) -> (RoadGraph, ShuffleRecord) {
    let n = graph.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut rng);

    let new_id = |i: usize| graph.node(ids[i]).id.clone();
    let mut position = vec![0; n];
    let mut b = RoadGraphBuilder::new();
    for (j, &i) in order.iter().enumerate() {
        position[i] = j;
        let GeoNode { lat, lon, .. } = *graph.node(i);
        b.add_node(new_id(i), lat, lon).expect("ids stay unique");
    }
    for (r, Road { id, .. }) in graph.roads().iter().enumerate() {
        b.add_road(id.clone(), graph.road_nodes(r).iter().map(|&i| new_id(i)).collect());
    }
    let shuffled = b.build().expect("shuffle preserves validity");
    let mapping = (0..n).map(|i| (graph.node(i).id.clone(), new_id(i))).collect();
    (shuffled, ShuffleRecord { mapping, position })
}
