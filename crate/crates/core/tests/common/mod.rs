#![allow(dead_code)]

use std::path::PathBuf;

use mapmatch::eval::{road_accuracy, EvalReport};
use mapmatch::graph::RoadGraph;
use mapmatch::io::{load_graph, MapFormat};
use mapmatch::matching::{loss_and_gradients, evaluate_loss, match_graphs, train_prepared, MatchResult, PairInputs, TrainConfig};
use mapmatch::noise::{perturb, shuffle_nodes, NoiseConfig, NoiseLevel};

pub fn fixture(name: &str) -> RoadGraph {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name);
    load_graph(&path, MapFormat::OsmXml).expect("fixture loads")
}

pub fn small_city() -> RoadGraph {
    fixture("city_small.osm")
}

pub fn large_city() -> RoadGraph {
    fixture("city_large.osm")
}

/// Shuffled copy of `graph` with Gaussian noise of `multiplier` base sigmas,
/// plus the ground truth linking the two.
pub fn noisy_copy(graph: &RoadGraph, multiplier: f64, seed: u64) -> (RoadGraph, mapmatch::eval::GroundTruth) {
    let (shuffled, record) = shuffle_nodes(graph, seed);
    let gt = record.ground_truth(graph, &shuffled);
    let noisy = perturb(&shuffled, &NoiseConfig::new(NoiseLevel::Multiplier(multiplier), seed.wrapping_add(1)));
    (noisy, gt)
}

pub struct SelfMatch {
    pub result: MatchResult,
    pub report: EvalReport,
    pub target: RoadGraph,
}

pub fn self_match(graph: &RoadGraph, multiplier: f64, seed: u64, cfg: &TrainConfig) -> SelfMatch {
    let (target, gt) = noisy_copy(graph, multiplier, seed);
    let result = match_graphs(graph, &target, cfg).expect("training succeeds");
    let report = road_accuracy(&result.assignment, graph, &target, &gt).expect("ground truth is consistent");
    SelfMatch { result, report, target }
}

/// Ten-node source with a perturbed, shuffled copy as target.
pub fn ten_node_pair() -> (RoadGraph, RoadGraph) {
    let nodes = [
        ("a", 31.2000, 121.4000),
        ("b", 31.2000, 121.4011),
        ("c", 31.2001, 121.4023),
        ("d", 31.2000, 121.4034),
        ("e", 31.2000, 121.4046),
        ("f", 31.2009, 121.4000),
        ("g", 31.2010, 121.4012),
        ("h", 31.2009, 121.4022),
        ("i", 31.2010, 121.4035),
        ("j", 31.2016, 121.4041),
    ];
    let edges = [
        ("a", "b"),
        ("b", "c"),
        ("c", "d"),
        ("d", "e"),
        ("f", "g"),
        ("g", "h"),
        ("h", "i"),
        ("a", "f"),
        ("c", "h"),
        ("e", "i"),
        ("i", "j"),
    ];
    let s = RoadGraph::from_edges(&nodes, &edges).unwrap();
    let (t, _) = noisy_copy(&s, 5.0, 3);
    (s, t)
}

#[derive(Debug)]
pub struct GradCheck {
    /// Largest relative error among entries whose gradient magnitude is at
    /// least `abs_floor`.
    pub worst_rel: f64,
    pub worst_abs: f64,
    pub failures: Vec<String>,
    pub checked: usize,
    /// Entries whose `±h` step straddles a ReLU kink and were confirmed at
    /// `h / 10` instead.
    pub kinks: Vec<String>,
}

/// Compares every gradient entry with a central difference of step `h`.
/// An entry passes when its relative error is within `rel` or its absolute
/// error within `abs_floor`. Parameters come from a few Adam steps so the
/// check does not sit at initialization.
///
/// A central difference is only a valid reference where the loss is smooth
/// over `[-h, h]`. When an entry fails and its forward and backward
/// differences disagree beyond the tolerance, the step crossed a ReLU kink;
/// the entry is then rechecked at `h / 10` and listed in `kinks`.
pub fn gradient_check(cfg: &TrainConfig, h: f64, rel: f64, abs_floor: f64) -> GradCheck {
    let (s, t) = ten_node_pair();
    let inputs = PairInputs::prepare(&s, &t, cfg).unwrap();
    let warm = TrainConfig { epochs: 3, ..cfg.clone() };
    let params = train_prepared(&inputs, &warm).unwrap().params;
    let (_, grads) = loss_and_gradients(&params, &inputs, cfg);
    let named = params.named_tensors();
    let values: Vec<_> = named.iter().map(|(_, m)| m.clone()).collect();
    let mut out = GradCheck {
        worst_rel: 0.0,
        worst_abs: 0.0,
        failures: Vec::new(),
        checked: 0,
        kinks: Vec::new(),
    };
    for (k, (name, tensor)) in named.iter().enumerate() {
        for idx in 0..tensor.len() {
            let shifted = |delta: f64| {
                let mut vals = values.clone();
                vals[k].data_mut()[idx] += delta;
                let mut p = params.clone();
                p.set_tensors(&vals);
                evaluate_loss(&p, &inputs, cfg)
            };
            let analytic = grads[k].data()[idx];
            let passes = |numeric: f64| {
                let err = (analytic - numeric).abs();
                err <= abs_floor || err <= rel * analytic.abs().max(numeric.abs())
            };
            let mut record = |numeric: f64| {
                let err = (analytic - numeric).abs();
                let scale = analytic.abs().max(numeric.abs());
                out.worst_abs = out.worst_abs.max(err);
                if scale >= abs_floor {
                    out.worst_rel = out.worst_rel.max(err / scale);
                }
            };
            let (up, mid, down) = (shifted(h), shifted(0.0), shifted(-h));
            let numeric = (up - down) / (2.0 * h);
            out.checked += 1;
            if passes(numeric) {
                record(numeric);
                continue;
            }
            let (fwd, bwd) = ((up - mid) / h, (mid - down) / h);
            let one_sided_gap = (fwd - bwd).abs() / fwd.abs().max(bwd.abs()).max(f64::MIN_POSITIVE);
            let fine = (shifted(h / 10.0) - shifted(-h / 10.0)) / (0.2 * h);
            let entry = format!("{name}[{idx}]: analytic {analytic:e} numeric {numeric:e}");
            if one_sided_gap > rel && passes(fine) {
                record(fine);
                out.kinks.push(entry);
            } else {
                record(numeric);
                out.failures.push(entry);
            }
        }
    }
    out
}
