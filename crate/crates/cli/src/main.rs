//! `mapmatch`: unsupervised road-network matching from the command line.

mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mapmatch::eval::{read_correspondences, road_accuracy, GroundTruth};
use mapmatch::graph::RoadGraph;
use mapmatch::io::{load_graph, save_graph};
use mapmatch::matching::{match_graphs, write_correspondences, write_loss_trace, Assignment, MatchError, TraceEntry};
use mapmatch::noise::{perturb, shuffle_nodes, NoiseConfig};
use mapmatch::tiler::tile_match;
use mapmatch::viz::export_viz;
use serde_json::json;
use thiserror::Error;

use config::{parse_alpha, parse_k, RunConfig};

/// Environment variable holding the tile worker count.
const WORKERS_ENV: &str = "MAPMATCH_WORKERS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("training failed: {0}")]
    Training(MatchError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Training(MatchError::NonFinite { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<MatchError> for CliError {
    fn from(e: MatchError) -> Self {
        match e {
            MatchError::NonFinite { .. } => CliError::Training(e),
            other => CliError::Usage(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "mapmatch", version, about = "Unsupervised road-network map matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match two maps and write node correspondences.
    Match(PairArgs),
    /// Match large maps through overlapping tiles.
    TileMatch(PairArgs),
    /// Write a noisy (optionally shuffled) copy of a map with its ground truth.
    Perturb(PerturbArgs),
    /// Score correspondences against ground truth.
    Eval(EvalArgs),
    /// Write colored GeoJSON and SVG views of a match.
    ExportViz(VizArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// `key = value` configuration file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Map format: osm-xml, geojson or edge-csv (default: from extension).
    #[arg(long, global = true)]
    format: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true)]
    log_level: Option<String>,
}

#[derive(Debug, Args)]
struct PairArgs {
    source: PathBuf,
    target: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    lambda: Option<f64>,
    /// Fixed fusion weight in [0, 1], or `learned`.
    #[arg(long)]
    alpha_fixed: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Tile grid size, or `auto`.
    #[arg(long)]
    k: Option<String>,
    /// Tile overlap as a fraction of the cell extent.
    #[arg(long)]
    overlap: Option<f64>,
    /// Feed raw latitude/longitude instead of pseudo coordinates.
    #[arg(long)]
    raw_coordinates: bool,
    /// Normalize both maps into their joint bounding box.
    #[arg(long)]
    shared_bbox: bool,
}

#[derive(Debug, Args)]
struct PerturbArgs {
    input: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
    /// low, medium, high or a multiplier of the base sigma.
    #[arg(long)]
    noise: Option<String>,
    /// Base noise standard deviation in meters.
    #[arg(long)]
    sigma_m: Option<f64>,
    /// Also permute node ids and storage order.
    #[arg(long)]
    shuffle: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    source: PathBuf,
    target: PathBuf,
    /// Correspondence CSV written by `match` or `tile-match`.
    #[arg(long)]
    assignment: PathBuf,
    /// Ground truth as `src_road_id,dst_road_id`.
    #[arg(long, conflicts_with = "gt_nodes", required_unless_present = "gt_nodes")]
    gt_roads: Option<PathBuf>,
    /// Ground truth as `src_node_id,dst_node_id`.
    #[arg(long)]
    gt_nodes: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct VizArgs {
    source: PathBuf,
    target: PathBuf,
    #[arg(long)]
    assignment: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

fn build_config(common: &CommonArgs, apply: impl FnOnce(&mut RunConfig) -> Result<(), CliError>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(f) = &common.format {
        cfg.format = Some(f.clone());
    }
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(level) = &common.log_level {
        cfg.log_level = level.clone();
    }
    apply(&mut cfg)?;
    cfg.validate()?;
    init_logging(&cfg.log_level)?;
    Ok(cfg)
}

fn init_logging(level: &str) -> Result<(), CliError> {
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| CliError::Usage(format!("invalid log level {level:?}")))?;
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .parse_default_env()
        .try_init();
    Ok(())
}

fn pair_config(args: &PairArgs) -> Result<RunConfig, CliError> {
    build_config(&args.common, |cfg| {
        if let Some(v) = args.lambda {
            cfg.train.lambda = v;
        }
        if let Some(v) = &args.alpha_fixed {
            cfg.train.alpha_fixed = parse_alpha(v)?;
        }
        if let Some(v) = args.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = args.lr {
            cfg.train.lr = v;
        }
        if let Some(v) = &args.k {
            cfg.k = parse_k(v)?;
        }
        if let Some(v) = args.overlap {
            cfg.overlap = v;
        }
        cfg.train.raw_coordinates |= args.raw_coordinates;
        cfg.train.shared_bbox |= args.shared_bbox;
        Ok(())
    })
}

fn load(path: &Path, cfg: &RunConfig) -> Result<RoadGraph, CliError> {
    let format = cfg.format_for(path)?;
    load_graph(path, format).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn out_file(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", path.display())))?;
    Ok((path, BufWriter::new(file)))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn csv_error(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("cannot write {}: {e}", path.display()))
}

fn write_match_outputs(
    dir: &Path,
    assignment: &Assignment,
    trace: &[TraceEntry],
    graph_s: &RoadGraph,
    graph_t: &RoadGraph,
) -> Result<(), CliError> {
    let (path, w) = out_file(dir, "correspondences.csv")?;
    write_correspondences(w, assignment, graph_s, graph_t).map_err(csv_error(&path))?;
    let (path, w) = out_file(dir, "loss_trace.csv")?;
    write_loss_trace(w, trace).map_err(csv_error(&path))?;
    Ok(())
}

fn write_manifest(dir: &Path, command: &str, args: &PairArgs, cfg: &RunConfig, final_alpha: f64) -> Result<(), CliError> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "source": args.source.display().to_string(),
        "target": args.target.display().to_string(),
        "seed": cfg.train.seed,
        "config_hash": cfg.hash(),
        "final_alpha": final_alpha,
        "config": cfg,
    });
    write_text(dir, "manifest.json", &serde_json::to_string_pretty(&manifest).expect("manifest serializes"))
}

fn cmd_match(args: &PairArgs) -> Result<(), CliError> {
    let cfg = pair_config(args)?;
    let graph_s = load(&args.source, &cfg)?;
    let graph_t = load(&args.target, &cfg)?;
    let result = match_graphs(&graph_s, &graph_t, &cfg.train)?;
    let dir = &args.common.out_dir;
    write_match_outputs(dir, &result.assignment, &result.outcome.trace, &graph_s, &graph_t)?;
    write_manifest(dir, "match", args, &cfg, result.outcome.final_alpha())?;
    println!(
        "matched {} of {} source nodes; final loss {:.6}",
        result.assignment.matched_count(),
        graph_s.node_count(),
        result.outcome.final_loss()
    );
    Ok(())
}

fn workers() -> Result<usize, CliError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn cmd_tile_match(args: &PairArgs) -> Result<(), CliError> {
    let cfg = pair_config(args)?;
    let workers = workers()?;
    let graph_s = load(&args.source, &cfg)?;
    let graph_t = load(&args.target, &cfg)?;
    let spec = cfg.tile_spec(graph_s.node_count().max(graph_t.node_count()));
    let tiled = tile_match(&graph_s, &graph_t, &spec, &cfg.train, workers)?;
    let trace = tiled.combined_trace();
    let dir = &args.common.out_dir;
    write_match_outputs(dir, &tiled.assignment, &trace, &graph_s, &graph_t)?;
    write_text(dir, "tiles.json", &tiled.diagnostics.to_json())?;
    write_manifest(dir, "tile-match", args, &cfg, trace.last().map_or(f64::NAN, |e| e.alpha))?;
    println!(
        "matched {} of {} source nodes over {} tiles (k = {})",
        tiled.assignment.matched_count(),
        graph_s.node_count(),
        tiled.tiles.len(),
        spec.k
    );
    Ok(())
}

fn cmd_perturb(args: &PerturbArgs) -> Result<(), CliError> {
    let cfg = build_config(&args.common, |cfg| {
        if let Some(v) = &args.noise {
            cfg.noise = v.clone();
        }
        if let Some(v) = args.sigma_m {
            cfg.sigma_m = v;
        }
        cfg.shuffle |= args.shuffle;
        Ok(())
    })?;
    let format = cfg.format_for(&args.input)?;
    let graph = load(&args.input, &cfg)?;
    let seed = cfg.train.seed;
    let (base, gt) = if cfg.shuffle {
        let (shuffled, record) = shuffle_nodes(&graph, seed);
        let gt = record.ground_truth(&graph, &shuffled);
        (shuffled, gt)
    } else {
        (graph.clone(), GroundTruth::identity(&graph))
    };
    let noise = NoiseConfig {
        sigma_meters: cfg.sigma_m,
        level: cfg.noise_level()?,
        seed,
    };
    let noisy = perturb(&base, &noise);
    let dir = &args.common.out_dir;
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let map_path = dir.join(format!("perturbed.{}", format.extension()));
    save_graph(&noisy, &map_path, format).map_err(|e| CliError::Io(e.to_string()))?;
    let (path, w) = out_file(dir, "gt_nodes.csv")?;
    gt.write_node_csv(w).map_err(csv_error(&path))?;
    let (path, w) = out_file(dir, "gt_roads.csv")?;
    gt.write_road_csv(w).map_err(csv_error(&path))?;
    println!(
        "wrote {} ({} nodes, sigma {:.2} m{})",
        map_path.display(),
        noisy.node_count(),
        noise.effective_sigma(),
        if cfg.shuffle { ", shuffled" } else { "" }
    );
    Ok(())
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn read_assignment(path: &Path, graph_s: &RoadGraph, graph_t: &RoadGraph) -> Result<Assignment, CliError> {
    read_correspondences(open(path)?, graph_s, graph_t).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = build_config(&args.common, |_| Ok(()))?;
    let graph_s = load(&args.source, &cfg)?;
    let graph_t = load(&args.target, &cfg)?;
    let assignment = read_assignment(&args.assignment, &graph_s, &graph_t)?;
    let gt = match (&args.gt_roads, &args.gt_nodes) {
        (Some(p), _) => GroundTruth::read_road_csv(open(p)?),
        (None, Some(p)) => GroundTruth::read_node_csv(open(p)?, &graph_s, &graph_t),
        (None, None) => unreachable!("clap requires one ground truth"),
    }
    .map_err(|e| CliError::Usage(format!("ground truth: {e}")))?;
    let report = road_accuracy(&assignment, &graph_s, &graph_t, &gt).map_err(|e| CliError::Usage(e.to_string()))?;
    write_text(&args.common.out_dir, "eval.json", &report.to_json())?;
    println!("{}", report.summary());
    Ok(())
}

fn cmd_export_viz(args: &VizArgs) -> Result<(), CliError> {
    let cfg = build_config(&args.common, |_| Ok(()))?;
    let graph_s = load(&args.source, &cfg)?;
    let graph_t = load(&args.target, &cfg)?;
    let assignment = read_assignment(&args.assignment, &graph_s, &graph_t)?;
    let viz = export_viz(&assignment, &graph_s, &graph_t);
    let dir = &args.common.out_dir;
    write_text(dir, "source.geojson", &viz.source_geojson)?;
    write_text(dir, "target.geojson", &viz.target_geojson)?;
    write_text(dir, "viz.svg", &viz.svg)?;
    println!("wrote source.geojson, target.geojson and viz.svg to {}", dir.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Match(a) => cmd_match(a),
        Command::TileMatch(a) => cmd_tile_match(a),
        Command::Perturb(a) => cmd_perturb(a),
        Command::Eval(a) => cmd_eval(a),
        Command::ExportViz(a) => cmd_export_viz(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
