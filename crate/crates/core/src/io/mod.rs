//! Map readers and writers: an OSM XML subset, GeoJSON line features and a
//! per-edge CSV.

mod edge_csv;
mod geojson;
mod osm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::graph::{GraphError, RoadGraph};

pub use edge_csv::{read_edge_csv, write_edge_csv};
pub use geojson::{read_geojson, write_geojson, GeoJsonStyle};
pub use osm::{read_osm_xml, write_osm_xml};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid map: {0}")]
    Graph(#[from] GraphError),
}

impl IoError {
    pub(crate) fn parse(msg: impl Into<String>) -> IoError {
        IoError::Parse(msg.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapFormat {
    OsmXml,
    GeoJson,
    EdgeCsv,
}

impl MapFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<MapFormat> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "osm" | "xml" => Some(MapFormat::OsmXml),
            "geojson" | "json" => Some(MapFormat::GeoJson),
            "csv" => Some(MapFormat::EdgeCsv),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MapFormat::OsmXml => "osm-xml",
            MapFormat::GeoJson => "geojson",
            MapFormat::EdgeCsv => "edge-csv",
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            MapFormat::OsmXml => "osm",
            MapFormat::GeoJson => "geojson",
            MapFormat::EdgeCsv => "csv",
        }
    }
}

impl fmt::Display for MapFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MapFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "osm-xml" | "osm" => Ok(MapFormat::OsmXml),
            "geojson" => Ok(MapFormat::GeoJson),
            "edge-csv" | "csv" => Ok(MapFormat::EdgeCsv),
            other => Err(format!("unknown map format {other:?} (expected osm-xml, geojson or edge-csv)")),
        }
    }
}

pub fn parse_graph(text: &str, format: MapFormat) -> Result<RoadGraph, IoError> {
    match format {
        MapFormat::OsmXml => read_osm_xml(text),
        MapFormat::GeoJson => read_geojson(text),
        MapFormat::EdgeCsv => read_edge_csv(text.as_bytes()),
    }
}

pub fn render_graph(graph: &RoadGraph, format: MapFormat) -> String {
    match format {
        MapFormat::OsmXml => write_osm_xml(graph),
        MapFormat::GeoJson => write_geojson(graph, &GeoJsonStyle::default()),
        MapFormat::EdgeCsv => {
            let mut buf = Vec::new();
            write_edge_csv(graph, &mut buf).expect("writing to memory");
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
    }
}

pub fn load_graph(path: &Path, format: MapFormat) -> Result<RoadGraph, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_graph(&text, format)
}

pub fn save_graph(graph: &RoadGraph, path: &Path, format: MapFormat) -> Result<(), IoError> {
    std::fs::write(path, render_graph(graph, format)).map_err(|source| IoError::Io {
        path: path.display().to_string(),
        source,
    })
}
