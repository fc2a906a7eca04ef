//! Regenerates the synthetic city fixtures under `tests/fixtures`.
//!
//! Usage: `cargo run --example gen_fixtures [out_dir]`

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use mapmatch::graph::{NodeId, RoadGraph, RoadGraphBuilder};
use mapmatch::io::{save_graph, MapFormat};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LAT0: f64 = 31.22;
const LON0: f64 = 121.46;
const METERS_PER_DEGREE: f64 = 111_320.0;

type Cell = (usize, usize);

/// Jittered street grid with dropped blocks, shape points along each
/// segment, ways spanning one to four blocks and short dead-end spurs.
fn city(seed: u64, width_m: f64, height_m: f64) -> RoadGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (sx, sy) = (110.0, 100.0);
    let nx = (width_m / sx).round() as usize + 1;
    let ny = (height_m / sy).round() as usize + 1;

    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut corner = BTreeMap::new();
    for i in 0..nx {
        for j in 0..ny {
            let x = i as f64 * sx + rng.random_range(-12.0..12.0);
            let y = j as f64 * sy + rng.random_range(-12.0..12.0);
            corner.insert((i, j), (x, y));
        }
    }

    let mut segments: Vec<(Cell, Cell, bool, usize)> = Vec::new();
    for j in 0..ny {
        for i in 0..nx - 1 {
            segments.push(((i, j), (i + 1, j), true, j));
        }
    }
    for i in 0..nx {
        for j in 0..ny - 1 {
            segments.push(((i, j), (i, j + 1), false, i));
        }
    }
    segments.retain(|_| rng.random::<f64>() > 0.08);

    let used: BTreeSet<Cell> = segments.iter().flat_map(|s| [s.0, s.1]).collect();
    let mut corner_id = BTreeMap::new();
    for c in used {
        corner_id.insert(c, points.len());
        points.push(corner[&c]);
    }

    let mut shape: BTreeMap<(Cell, Cell), Vec<usize>> = BTreeMap::new();
    for &(a, b, _, _) in &segments {
        let ((xa, ya), (xb, yb)) = (corner[&a], corner[&b]);
        let len = (xb - xa).hypot(yb - ya);
        let (px, py) = (-(yb - ya) / len, (xb - xa) / len);
        let inner = (len / 38.0).floor() as usize;
        let mut ids = vec![corner_id[&a]];
        for t in 1..=inner {
            let f = t as f64 / (inner + 1) as f64 + rng.random_range(-0.06..0.06);
            let off = rng.random_range(-4.0..4.0);
            ids.push(points.len());
            points.push((xa + f * (xb - xa) + off * px, ya + f * (yb - ya) + off * py));
        }
        ids.push(corner_id[&b]);
        shape.insert((a, b), ids);
    }

    let mut lines: BTreeMap<(bool, usize), Vec<(Cell, Cell)>> = BTreeMap::new();
    for &(a, b, horizontal, line) in &segments {
        lines.entry((horizontal, line)).or_default().push((a, b));
    }
    let mut ways: Vec<Vec<usize>> = Vec::new();
    for segs in lines.values_mut() {
        segs.sort();
        let mut chains: Vec<Vec<(Cell, Cell)>> = vec![vec![segs[0]]];
        for &s in &segs[1..] {
            let chain = chains.last_mut().unwrap();
            if s.0 == chain.last().unwrap().1 {
                chain.push(s);
            } else {
                chains.push(vec![s]);
            }
        }
        for chain in chains {
            let mut k = 0;
            while k < chain.len() {
                let take = rng.random_range(1..=4).min(chain.len() - k);
                let mut seq: Vec<usize> = Vec::new();
                for s in &chain[k..k + take] {
                    let ids = &shape[s];
                    seq.extend_from_slice(if seq.is_empty() { ids } else { &ids[1..] });
                }
                ways.push(seq);
                k += take;
            }
        }
    }

    let spurs = (segments.len() / 8).max(3);
    let long: Vec<Vec<usize>> = ways.iter().filter(|w| w.len() > 2).cloned().collect();
    for _ in 0..spurs {
        let w = long.choose(&mut rng).unwrap();
        let base = w[rng.random_range(1..w.len() - 1)];
        let (mut x, mut y) = points[base];
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        let mut seq = vec![base];
        for _ in 0..rng.random_range(1..=2) {
            x += 35.0 * angle.cos() + rng.random_range(-5.0..5.0);
            y += 35.0 * angle.sin() + rng.random_range(-5.0..5.0);
            seq.push(points.len());
            points.push((x, y));
        }
        ways.push(seq);
    }

    let round7 = |v: f64| (v * 1e7).round() / 1e7;
    let lon_scale = METERS_PER_DEGREE * LAT0.to_radians().cos();
    let node_id = |i: usize| NodeId::from((1000 + i).to_string());
    let mut b = RoadGraphBuilder::new();
    for (i, &(x, y)) in points.iter().enumerate() {
        b.add_node(node_id(i), round7(LAT0 + y / METERS_PER_DEGREE), round7(LON0 + x / lon_scale))
            .expect("finite coordinates");
    }
    for (w, seq) in ways.iter().enumerate() {
        b.add_road((50_000 + w).to_string().into(), seq.iter().map(|&i| node_id(i)).collect());
    }
    b.build().expect("generated city is a valid graph")
}

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures"));
    for (name, seed, w, h) in [("city_small", 7, 600.0, 500.0), ("city_large", 11, 2200.0, 1800.0)] {
        let g = city(seed, w, h);
        let path = out.join(format!("{name}.osm"));
        save_graph(&g, &path, MapFormat::OsmXml).expect("fixture written");
        println!("{}: {} nodes, {} edges, {} roads", path.display(), g.node_count(), g.edge_count(), g.road_count());
    }
}
