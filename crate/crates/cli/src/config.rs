//! Run configuration: defaults, an optional `key = value` file and flag
//! overrides, in increasing precedence.

use std::path::Path;

use mapmatch::io::MapFormat;
use mapmatch::matching::TrainConfig;
use mapmatch::noise::{NoiseLevel, BASE_SIGMA_M};
use mapmatch::tiler::{TileSpec, DEFAULT_MAX_NODES, DEFAULT_OVERLAP};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Grid size for tiled matching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSize {
    Auto,
    Fixed(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub k: GridSize,
    pub overlap: f64,
    pub max_nodes_per_tile: usize,
    /// Map format of inputs and written maps; `None` guesses from extensions.
    pub format: Option<String>,
    pub noise: String,
    pub sigma_m: f64,
    pub shuffle: bool,
    pub log_level: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            k: GridSize::Auto,
            overlap: DEFAULT_OVERLAP,
            max_nodes_per_tile: DEFAULT_MAX_NODES,
            format: None,
            noise: "low".into(),
            sigma_m: BASE_SIGMA_M,
            shuffle: false,
            log_level: "warn".into(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Usage(format!("invalid value {value:?} for {key} (expected true or false)"))),
    }
}

pub fn parse_alpha(value: &str) -> Result<Option<f64>, CliError> {
    match value {
        "learned" | "none" => Ok(None),
        v => parse("alpha_fixed", v).map(Some),
    }
}

pub fn parse_k(value: &str) -> Result<GridSize, CliError> {
    match value {
        "auto" => Ok(GridSize::Auto),
        v => parse("k", v).map(GridSize::Fixed),
    }
}

impl RunConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "epochs" => self.train.epochs = parse(key, value)?,
            "lr" => self.train.lr = parse(key, value)?,
            "lambda" => self.train.lambda = parse(key, value)?,
            "seed" => self.train.seed = parse(key, value)?,
            "sinkhorn_iters" => self.train.sinkhorn_iters = parse(key, value)?,
            "alpha_fixed" => self.train.alpha_fixed = parse_alpha(value)?,
            "shared_bbox" => self.train.shared_bbox = parse_bool(key, value)?,
            "raw_coordinates" => self.train.raw_coordinates = parse_bool(key, value)?,
            "k" => self.k = parse_k(value)?,
            "overlap" => self.overlap = parse(key, value)?,
            "max_nodes_per_tile" => self.max_nodes_per_tile = parse(key, value)?,
            "format" => self.format = Some(value.to_string()),
            "noise" => self.noise = value.to_string(),
            "sigma_m" => self.sigma_m = parse(key, value)?,
            "shuffle" => self.shuffle = parse_bool(key, value)?,
            "log_level" => self.log_level = value.to_string(),
            other => return Err(CliError::Usage(format!("unknown configuration key {other:?}"))),
        }
        Ok(())
    }

    /// Reads a `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| CliError::Usage(format!("{}:{}: {e}", path.display(), n + 1)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        if let Some(f) = &self.format {
            f.parse::<MapFormat>().map_err(CliError::Usage)?;
        }
        self.noise_level()?;
        if !(self.sigma_m.is_finite() && self.sigma_m >= 0.0) {
            return Err(CliError::Usage(format!("sigma_m must be non-negative, got {}", self.sigma_m)));
        }
        self.tile_spec(1).validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(())
    }

    pub fn noise_level(&self) -> Result<NoiseLevel, CliError> {
        self.noise.parse().map_err(CliError::Usage)
    }

    /// Tile grid for maps of at most `nodes` nodes.
    pub fn tile_spec(&self, nodes: usize) -> TileSpec {
        match self.k {
            GridSize::Fixed(k) => TileSpec {
                k,
                overlap_ratio: self.overlap,
                max_nodes_per_tile: self.max_nodes_per_tile,
            },
            GridSize::Auto => TileSpec::auto(nodes, self.overlap, self.max_nodes_per_tile),
        }
    }

    pub fn format_for(&self, path: &Path) -> Result<MapFormat, CliError> {
        match &self.format {
            Some(f) => f.parse().map_err(CliError::Usage),
            None => MapFormat::from_path(path).ok_or_else(|| {
                CliError::Usage(format!(
                    "cannot tell the map format of {} from its extension; pass --format",
                    path.display()
                ))
            }),
        }
    }

    /// SHA-256 over the canonical JSON of the configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
