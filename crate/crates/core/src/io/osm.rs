//! Reader for the `<node>` / `<way><nd/></way>` subset of OSM XML.

use std::collections::HashMap;
use std::fmt::Write;

use super::IoError;
use crate::graph::{NodeId, RoadGraph, RoadGraphBuilder};

/// A start, empty or end tag with its attributes.
#[derive(Debug, PartialEq)]
struct Tag<'a> {
    name: &'a str,
    attrs: Vec<(&'a str, String)>,
    closing: bool,
    self_closing: bool,
}

impl Tag<'_> {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| *k == key).map(|(_, v)| v.as_str())
    }
}

fn unescape(raw: &str) -> Result<String, IoError> {
    if !raw.contains('&') {
        return Ok(raw.to_string());
    }
    let mut out = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        let end = rest[pos..]
            .find(';')
            .ok_or_else(|| IoError::parse(format!("unterminated entity in {raw:?}")))?;
        let entity = &rest[pos + 1..pos + end];
        match entity {
            "amp" => out.push('&'),
            "lt" => out.push('<'),
            "gt" => out.push('>'),
            "quot" => out.push('"'),
            "apos" => out.push('\''),
            _ => {
                let code = if let Some(hex) = entity.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = entity.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                let c = code
                    .and_then(char::from_u32)
                    .ok_or_else(|| IoError::parse(format!("unknown entity &{entity};")))?;
                out.push(c);
            }
        }
        rest = &rest[pos + end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn escape(raw: &str) -> String {
    raw.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset].bytes().filter(|&b| b == b'\n').count() + 1
}

fn parse_tag<'a>(body: &'a str, text: &str, offset: usize) -> Result<Tag<'a>, IoError> {
    let err = |msg: &str| IoError::parse(format!("line {}: {msg}", line_of(text, offset)));
    let (closing, mut body) = match body.strip_prefix('/') {
        Some(rest) => (true, rest),
        None => (false, body),
    };
    let self_closing = body.ends_with('/');
    if self_closing {
        body = &body[..body.len() - 1];
    }
    let body = body.trim();
    let name_end = body.find(|c: char| c.is_whitespace()).unwrap_or(body.len());
    let name = &body[..name_end];
    if name.is_empty() {
        return Err(err("empty tag name"));
    }
    let mut attrs = Vec::new();
    let mut rest = body[name_end..].trim_start();
    while !rest.is_empty() {
        let eq = rest.find('=').ok_or_else(|| err("attribute without value"))?;
        let key = rest[..eq].trim();
        let after = rest[eq + 1..].trim_start();
        let quote = after.chars().next().ok_or_else(|| err("missing attribute value"))?;
        if quote != '"' && quote != '\'' {
            return Err(err("unquoted attribute value"));
        }
        let close = after[1..]
            .find(quote)
            .ok_or_else(|| err("unterminated attribute value"))?;
        attrs.push((key, unescape(&after[1..1 + close])?));
        rest = after[close + 2..].trim_start();
    }
    Ok(Tag {
        name,
        attrs,
        closing,
        self_closing,
    })
}

/// Iterates over the tags of `text`, skipping declarations, comments,
/// CDATA and character data.
fn tags(text: &str) -> impl Iterator<Item = Result<(usize, Tag<'_>), IoError>> {
    let mut pos = 0;
    std::iter::from_fn(move || loop {
        let start = pos + text[pos..].find('<')?;
        let rest = &text[start..];
        let (skip_to, is_tag) = if rest.starts_with("<!--") {
            (rest.find("-->").map(|e| e + 3), false)
        } else if rest.starts_with("<![CDATA[") {
            (rest.find("]]>").map(|e| e + 3), false)
        } else if rest.starts_with("<?") {
            (rest.find("?>").map(|e| e + 2), false)
        } else if rest.starts_with("<!") {
            (rest.find('>').map(|e| e + 1), false)
        } else {
            (rest.find('>').map(|e| e + 1), true)
        };
        let Some(len) = skip_to else {
            pos = text.len();
            return Some(Err(IoError::parse(format!("line {}: unterminated markup", line_of(text, start)))));
        };
        pos = start + len;
        if is_tag {
            return Some(parse_tag(&text[start + 1..start + len - 1], text, start).map(|t| (start, t)));
        }
    })
}

fn coordinate(tag: &Tag, key: &str, text: &str, offset: usize) -> Result<f64, IoError> {
    let raw = tag
        .attr(key)
        .ok_or_else(|| IoError::parse(format!("line {}: node without {key}", line_of(text, offset))))?;
    raw.trim()
        .parse()
        .map_err(|_| IoError::parse(format!("line {}: bad {key} value {raw:?}", line_of(text, offset))))
}

/// Parses OSM XML. Only nodes referenced by some way are kept, in document
/// order; every way becomes a road named by its id.
pub fn read_osm_xml(text: &str) -> Result<RoadGraph, IoError> {
    let mut nodes: Vec<(NodeId, f64, f64)> = Vec::new();
    let mut node_index: HashMap<NodeId, usize> = HashMap::new();
    let mut ways: Vec<(String, Vec<NodeId>)> = Vec::new();
    let mut current_way: Option<(String, Vec<NodeId>)> = None;
    let mut saw_root = false;

    for item in tags(text) {
        let (offset, tag) = item?;
        match (tag.name, tag.closing) {
            ("osm", false) => saw_root = true,
            ("node", false) => {
                let id = tag
                    .attr("id")
                    .ok_or_else(|| IoError::parse(format!("line {}: node without id", line_of(text, offset))))?;
                let lat = coordinate(&tag, "lat", text, offset)?;
                let lon = coordinate(&tag, "lon", text, offset)?;
                let id = NodeId::from(id);
                if let Some(&i) = node_index.get(&id) {
                    if nodes[i].1 != lat || nodes[i].2 != lon {
                        return Err(crate::graph::GraphError::ConflictingNode(id).into());
                    }
                } else {
                    node_index.insert(id.clone(), nodes.len());
                    nodes.push((id, lat, lon));
                }
            }
            ("way", false) => {
                if current_way.is_some() {
                    return Err(IoError::parse(format!("line {}: nested way", line_of(text, offset))));
                }
                let id = tag
                    .attr("id")
                    .ok_or_else(|| IoError::parse(format!("line {}: way without id", line_of(text, offset))))?;
                let way = (id.to_string(), Vec::new());
                if tag.self_closing {
                    ways.push(way);
                } else {
                    current_way = Some(way);
                }
            }
            ("way", true) => {
                let way = current_way
                    .take()
                    .ok_or_else(|| IoError::parse(format!("line {}: unmatched </way>", line_of(text, offset))))?;
                ways.push(way);
            }
            ("nd", false) => {
                let way = current_way
                    .as_mut()
                    .ok_or_else(|| IoError::parse(format!("line {}: <nd> outside a way", line_of(text, offset))))?;
                let r = tag
                    .attr("ref")
                    .ok_or_else(|| IoError::parse(format!("line {}: <nd> without ref", line_of(text, offset))))?;
                way.1.push(NodeId::from(r));
            }
            _ => {}
        }
    }
    if current_way.is_some() {
        return Err(IoError::parse("unterminated <way>"));
    }
    if !saw_root {
        return Err(IoError::parse("missing <osm> root element"));
    }

    let mut referenced = vec![false; nodes.len()];
    for (_, refs) in &ways {
        for r in refs {
            if let Some(&i) = node_index.get(r) {
                referenced[i] = true;
            }
        }
    }
    let mut b = RoadGraphBuilder::new();
    for (i, (id, lat, lon)) in nodes.into_iter().enumerate() {
        if referenced[i] {
            b.add_node(id, lat, lon)?;
        }
    }
    for (id, refs) in ways {
        b.add_road(id.into(), refs);
    }
    Ok(b.build()?)
}

/// Serializes nodes (storage order) and roads as OSM XML.
pub fn write_osm_xml(graph: &RoadGraph) -> String {
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str("<osm version=\"0.6\" generator=\"mapmatch\">\n");
    for n in graph.nodes() {
        let _ = writeln!(
            out,
            "  <node id=\"{}\" lat=\"{}\" lon=\"{}\"/>",
            escape(n.id.as_str()),
            n.lat,
            n.lon
        );
    }
    for road in graph.roads() {
        let _ = writeln!(out, "  <way id=\"{}\">", escape(road.id.as_str()));
        for id in &road.nodes {
            let _ = writeln!(out, "    <nd ref=\"{}\"/>", escape(id.as_str()));
        }
        out.push_str("  </way>\n");
    }
    out.push_str("</osm>\n");
    out
}
