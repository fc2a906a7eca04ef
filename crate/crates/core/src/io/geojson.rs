//! GeoJSON FeatureCollections of LineString roads.

use std::collections::HashMap;

use serde_json::{json, Map, Value};

use super::IoError;
use crate::graph::{NodeId, RoadGraph, RoadGraphBuilder};

/// Extra per-road properties for [`write_geojson`].
#[derive(Clone, Debug, Default)]
pub struct GeoJsonStyle {
    /// Properties merged into the feature of the road at the same position.
    pub road_properties: Vec<Map<String, Value>>,
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a FeatureCollection. LineString features become roads named by
/// their `road_id` property (or feature index). Node identity comes from an
/// optional `node_ids` property aligned with the coordinates; otherwise
/// vertices with exactly equal coordinates are merged. Other geometry types
/// are ignored.
pub fn read_geojson(text: &str) -> Result<RoadGraph, IoError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| IoError::parse(format!("invalid JSON: {e}")))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(IoError::parse("expected a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| IoError::parse("FeatureCollection without a features array"))?;

    let mut b = RoadGraphBuilder::new();
    let mut by_coord: HashMap<(u64, u64), NodeId> = HashMap::new();
    let mut generated = 0usize;
    for (k, feature) in features.iter().enumerate() {
        let geometry = feature.get("geometry").unwrap_or(&Value::Null);
        match geometry.get("type").and_then(Value::as_str) {
            Some("LineString") => {}
            Some(other) => {
                log::warn!("feature {k}: skipping {other} geometry");
                continue;
            }
            None => return Err(IoError::parse(format!("feature {k}: missing geometry type"))),
        }
        let coords = geometry
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| IoError::parse(format!("feature {k}: LineString without coordinates")))?;
        let props = feature.get("properties").and_then(Value::as_object);
        let road_id = props
            .and_then(|p| p.get("road_id"))
            .and_then(id_string)
            .unwrap_or_else(|| k.to_string());
        let node_ids = match props.and_then(|p| p.get("node_ids")) {
            None | Some(Value::Null) => None,
            Some(Value::Array(ids)) => {
                if ids.len() != coords.len() {
                    return Err(IoError::parse(format!(
                        "feature {k}: {} node_ids for {} coordinates",
                        ids.len(),
                        coords.len()
                    )));
                }
                let ids: Option<Vec<String>> = ids.iter().map(id_string).collect();
                Some(ids.ok_or_else(|| IoError::parse(format!("feature {k}: node_ids must be strings or numbers")))?)
            }
            Some(_) => return Err(IoError::parse(format!("feature {k}: node_ids must be an array"))),
        };

        let mut seq = Vec::with_capacity(coords.len());
        for (j, c) in coords.iter().enumerate() {
            let pair = c
                .as_array()
                .filter(|a| a.len() >= 2)
                .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
                .ok_or_else(|| IoError::parse(format!("feature {k}: coordinate {j} is not [lon, lat]")))?;
            let (lon, lat) = pair;
            let id = match &node_ids {
                Some(ids) => NodeId::from(ids[j].as_str()),
                None => by_coord
                    .entry((lat.to_bits(), lon.to_bits()))
                    .or_insert_with(|| {
                        generated += 1;
                        NodeId::from(format!("g{}", generated - 1))
                    })
                    .clone(),
            };
            b.add_node(id.clone(), lat, lon)?;
            seq.push(id);
        }
        b.add_road(road_id.into(), seq);
    }
    Ok(b.build()?)
}

/// Writes every road as a LineString feature carrying `road_id` and
/// `node_ids`.
pub fn write_geojson(graph: &RoadGraph, style: &GeoJsonStyle) -> String {
    let features: Vec<Value> = graph
        .roads()
        .iter()
        .enumerate()
        .map(|(r, road)| {
            let coords: Vec<Value> = graph
                .road_nodes(r)
                .iter()
                .map(|&i| {
                    let n = graph.node(i);
                    json!([n.lon, n.lat])
                })
                .collect();
            let mut props = Map::new();
            props.insert("road_id".into(), json!(road.id.as_str()));
            props.insert(
                "node_ids".into(),
                Value::Array(road.nodes.iter().map(|n| json!(n.as_str())).collect()),
            );
            if let Some(extra) = style.road_properties.get(r) {
                for (k, v) in extra {
                    props.insert(k.clone(), v.clone());
                }
            }
            json!({
                "type": "Feature",
                "geometry": {"type": "LineString", "coordinates": coords},
                "properties": props,
            })
        })
        .collect();
    let doc = json!({"type": "FeatureCollection", "features": features});
    serde_json::to_string_pretty(&doc).expect("GeoJSON serializes")
}
