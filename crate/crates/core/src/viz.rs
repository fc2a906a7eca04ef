//! Side-by-side rendering of a match: matched road pairs share a color
//! derived from the source road id, unmatched roads are gray.

use std::fmt::Write;

use serde_json::{json, Map};

use crate::geo::BoundingBox;
use crate::graph::RoadGraph;
use crate::io::{write_geojson, GeoJsonStyle};
use crate::matching::{lift_roads, Assignment};

pub const UNMATCHED_COLOR: &str = "#9e9e9e";

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Saturated `#rrggbb` color derived from a road id.
pub fn color_for(road_id: &str) -> String {
    let h = fnv1a(road_id.as_bytes());
    let hue = (h % 360) as f64;
    let sat = 0.65 + ((h >> 16) % 30) as f64 / 100.0;
    let light = 0.40 + ((h >> 32) % 20) as f64 / 100.0;
    let c = (1.0 - (2.0 * light - 1.0).abs()) * sat;
    let x = c * (1.0 - ((hue / 60.0) % 2.0 - 1.0).abs());
    let m = light - c / 2.0;
    let (r, g, b) = match (hue / 60.0) as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let byte = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b))
}

/// Per-road colors and partner road ids for both maps.
#[derive(Clone, Debug, PartialEq)]
pub struct RoadColors {
    pub source: Vec<String>,
    pub target: Vec<String>,
    pub source_partner: Vec<Option<String>>,
    pub target_partner: Vec<Option<String>>,
}

/// Colors every source road with a lifted match by its own id and gives
/// each target road the color of its best-supported source road.
pub fn road_colors(assignment: &Assignment, graph_s: &RoadGraph, graph_t: &RoadGraph) -> RoadColors {
    let mut out = RoadColors {
        source: vec![UNMATCHED_COLOR.to_string(); graph_s.road_count()],
        target: vec![UNMATCHED_COLOR.to_string(); graph_t.road_count()],
        source_partner: vec![None; graph_s.road_count()],
        target_partner: vec![None; graph_t.road_count()],
    };
    let mut target_support = vec![0usize; graph_t.road_count()];
    for m in lift_roads(assignment, graph_s, graph_t) {
        let rs = graph_s.road_index(&m.source).expect("lifted from the source graph");
        let rt = graph_t.road_index(&m.target).expect("lifted from the target graph");
        let color = color_for(m.source.as_str());
        out.source[rs] = color.clone();
        out.source_partner[rs] = Some(m.target.to_string());
        if m.support > target_support[rt] {
            target_support[rt] = m.support;
            out.target[rt] = color;
            out.target_partner[rt] = Some(m.source.to_string());
        }
    }
    out
}

fn styled(graph: &RoadGraph, colors: &[String], partners: &[Option<String>]) -> String {
    let road_properties = colors
        .iter()
        .zip(partners)
        .map(|(c, p)| {
            let mut m = Map::new();
            m.insert("stroke".into(), json!(c));
            m.insert("matched_road".into(), json!(p));
            m
        })
        .collect();
    write_geojson(graph, &GeoJsonStyle { road_properties })
}

/// Equirectangular projection of a map into a `width` x `height` panel.
struct Panel {
    bbox: BoundingBox,
    scale: f64,
    x0: f64,
    y0: f64,
    height: f64,
}

impl Panel {
    fn new(bbox: BoundingBox, x0: f64, width: f64, height: f64, margin: f64) -> Panel {
        let k = bbox.lat_min.max(-89.0).min(89.0).to_radians().cos();
        let (w, h) = ((bbox.lon_span() * k).max(1e-12), bbox.lat_span().max(1e-12));
        let scale = ((width - 2.0 * margin) / w).min((height - 2.0 * margin) / h);
        Panel {
            bbox,
            scale,
            x0: x0 + margin,
            y0: margin,
            height: height - 2.0 * margin,
        }
    }

    fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let k = self.bbox.lat_min.max(-89.0).min(89.0).to_radians().cos();
        let x = self.x0 + (lon - self.bbox.lon_min) * k * self.scale;
        let y = self.y0 + self.height - (lat - self.bbox.lat_min) * self.scale;
        (x, y)
    }
}

fn draw(out: &mut String, graph: &RoadGraph, colors: &[String], panel: &Panel) {
    for r in 0..graph.road_count() {
        let points: Vec<String> = graph
            .road_nodes(r)
            .iter()
            .map(|&i| {
                let n = graph.node(i);
                let (x, y) = panel.project(n.lat, n.lon);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"  <polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            points.join(" "),
            colors[r]
        );
    }
}

/// Static SVG with the source on the left and the target on the right.
pub fn render_svg(graph_s: &RoadGraph, graph_t: &RoadGraph, colors: &RoadColors) -> String {
    let (w, h, margin) = (600.0, 600.0, 20.0);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{h}" viewBox="0 0 {} {h}">"#,
        2.0 * w,
        2.0 * w
    );
    out.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (graph, roads, x0) in [(graph_s, &colors.source, 0.0), (graph_t, &colors.target, w)] {
        if let Some(bbox) = graph.bbox() {
            draw(&mut out, graph, roads, &Panel::new(bbox, x0, w, h, margin));
        }
    }
    let _ = writeln!(
        out,
        r#"  <line x1="{w}" y1="0" x2="{w}" y2="{h}" stroke="black" stroke-width="1"/>"#
    );
    out.push_str("</svg>\n");
    out
}

#[derive(Clone, Debug)]
pub struct VizOutput {
    pub source_geojson: String,
    pub target_geojson: String,
    pub svg: String,
}

pub fn export_viz(assignment: &Assignment, graph_s: &RoadGraph, graph_t: &RoadGraph) -> VizOutput {
    let colors = road_colors(assignment, graph_s, graph_t);
    VizOutput {
        source_geojson: styled(graph_s, &colors.source, &colors.source_partner),
        target_geojson: styled(graph_t, &colors.target, &colors.target_partner),
        svg: render_svg(graph_s, graph_t, &colors),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::read_geojson;

    fn pair() -> (RoadGraph, RoadGraph) {
        let s = RoadGraph::from_edges(
            &[("a", 0.0, 0.0), ("b", 0.0, 0.001), ("c", 0.001, 0.001)],
            &[("a", "b"), ("b", "c")],
        )
        .unwrap();
        let t = RoadGraph::from_edges(
            &[("x", 0.0, 0.0), ("y", 0.0, 0.001), ("z", 0.001, 0.001), ("w", 0.002, 0.002)],
            &[("x", "y"), ("y", "z"), ("z", "w")],
        )
        .unwrap();
        (s, t)
    }

    #[test]
    fn colors_are_stable_hex() {
        assert_eq!(color_for("50001"), color_for("50001"));
        assert_ne!(color_for("50001"), color_for("50002"));
        for id in ["", "a", "road-7", "50000"] {
            let c = color_for(id);
            assert_eq!(c.len(), 7);
            assert!(c.starts_with('#') && c[1..].chars().all(|ch| ch.is_ascii_hexdigit()));
            assert_ne!(c, UNMATCHED_COLOR);
        }
    }

    #[test]
    fn matched_pairs_share_colors() {
        let (s, t) = pair();
        let a = Assignment {
            targets: vec![Some(0), Some(1), None],
            confidence: vec![1.0, 1.0, 0.0],
        };
        let colors = road_colors(&a, &s, &t);
        assert_eq!(colors.source[0], color_for("e0"));
        assert_eq!(colors.target[0], colors.source[0]);
        assert_eq!(colors.target[2], UNMATCHED_COLOR);
        assert_eq!(colors.target_partner[0].as_deref(), Some("e0"));
    }

    #[test]
    fn outputs_parse_back() {
        let (s, t) = pair();
        let a = Assignment::unmatched(3);
        let v = export_viz(&a, &s, &t);
        let back = read_geojson(&v.target_geojson).unwrap();
        assert_eq!(back.nodes(), t.nodes());
        assert_eq!(back.roads(), t.roads());
        assert!(v.svg.starts_with("<svg"));
        assert_eq!(v.svg.matches("<polyline").count(), s.road_count() + t.road_count());
        assert!(v.svg.contains(UNMATCHED_COLOR));
    }
}
