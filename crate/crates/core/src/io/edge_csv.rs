//! One row per road segment:
//! `src_id,src_lat,src_lon,dst_id,dst_lat,dst_lon,road_id`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IoError;
use crate::graph::{NodeId, RoadGraph, RoadGraphBuilder};

#[derive(Debug, Deserialize, Serialize)]
struct EdgeRow {
    src_id: String,
    src_lat: f64,
    src_lon: f64,
    dst_id: String,
    dst_lat: f64,
    dst_lon: f64,
    road_id: String,
}

/// Parses the edge CSV. Rows sharing a `road_id` form one road in file order
/// and must chain: each row starts where the previous one of that road ended.
/// Roads are ordered by first appearance.
pub fn read_edge_csv(reader: impl Read) -> Result<RoadGraph, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut b = RoadGraphBuilder::new();
    let mut roads: Vec<(String, Vec<NodeId>)> = Vec::new();
    let mut road_pos: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (k, row) in rdr.deserialize::<EdgeRow>().enumerate() {
        let row = row.map_err(|e| IoError::parse(format!("row {}: {e}", k + 1)))?;
        let src = NodeId::from(row.src_id);
        let dst = NodeId::from(row.dst_id);
        b.add_node(src.clone(), row.src_lat, row.src_lon)?;
        b.add_node(dst.clone(), row.dst_lat, row.dst_lon)?;
        match road_pos.get(&row.road_id) {
            Some(&r) => {
                let seq = &mut roads[r].1;
                if seq.last() != Some(&src) {
                    return Err(IoError::parse(format!(
                        "row {}: road {} does not continue from node {}",
                        k + 1,
                        row.road_id,
                        seq.last().map(NodeId::as_str).unwrap_or("")
                    )));
                }
                seq.push(dst);
            }
            None => {
                road_pos.insert(row.road_id.clone(), roads.len());
                roads.push((row.road_id, vec![src, dst]));
            }
        }
    }
    for (id, seq) in roads {
        b.add_road(id.into(), seq);
    }
    Ok(b.build()?)
}

/// Writes each road as consecutive segment rows.
pub fn write_edge_csv(graph: &RoadGraph, writer: impl Write) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    for (r, road) in graph.roads().iter().enumerate() {
        for pair in graph.road_nodes(r).windows(2) {
            let (a, b) = (graph.node(pair[0]), graph.node(pair[1]));
            w.serialize(EdgeRow {
                src_id: a.id.0.clone(),
                src_lat: a.lat,
                src_lon: a.lon,
                dst_id: b.id.0.clone(),
                dst_lat: b.lat,
                dst_lon: b.lon,
                road_id: road.id.0.clone(),
            })
            .map_err(|e| IoError::parse(e.to_string()))?;
        }
    }
    w.flush().map_err(|source| IoError::Io {
        path: "<edge csv>".into(),
        source,
    })
}
