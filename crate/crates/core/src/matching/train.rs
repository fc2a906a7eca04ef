use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::loss_on_tape;
use super::similarity::{pairwise_distance, struct_diff};
use super::sinkhorn::{sinkhorn_on_tape, DEFAULT_ITERS};
use crate::autodiff::{Adam, AdamConfig, Matrix, MessageGraph, Tape, Var};
use crate::features::{raw_coordinates, EdgeFeatures, PseudoCoordinates};
use crate::graph::RoadGraph;
use crate::model::{encode_on_tape, kernel_apply, kernel_on_tape, message_graph, KernelParams, ModelParams, ModelVars};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub sinkhorn_iters: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Normalize both maps into the union of their bounding boxes instead
    /// of each map's own box.
    pub shared_bbox: bool,
    /// Fixed fusion weight; `None` learns it.
    pub alpha_fixed: Option<f64>,
    /// Ablation: feed raw latitude/longitude to the encoder and the distance
    /// matrix instead of pseudo coordinates.
    pub raw_coordinates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 1e-3,
            sinkhorn_iters: DEFAULT_ITERS,
            lambda: 0.5,
            seed: 0,
            shared_bbox: false,
            alpha_fixed: None,
            raw_coordinates: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |msg: String| Err(MatchError::Config(msg));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.sinkhorn_iters == 0 {
            return bad("sinkhorn_iters must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda must lie in [0, 1], got {}", self.lambda));
        }
        if let Some(a) = self.alpha_fixed {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("alpha_fixed must lie in [0, 1], got {a}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} graph has no nodes")]
    EmptyGraph(&'static str),
    #[error("non-finite loss {loss} at epoch {epoch}")]
    NonFinite { epoch: usize, loss: f64 },
}

/// Constant inputs of one source/target pair.
#[derive(Clone, Debug)]
pub struct PairInputs {
    pub x_s: Matrix,
    pub x_t: Matrix,
    pub edges_s: Matrix,
    pub edges_t: Matrix,
    pub graph_s: Arc<MessageGraph>,
    pub graph_t: Arc<MessageGraph>,
    /// Pairwise distances between encoder input positions.
    pub d: Matrix,
    /// Structural difference of normalized degrees.
    pub t: Matrix,
}

impl PairInputs {
    pub fn prepare(graph_s: &RoadGraph, graph_t: &RoadGraph, cfg: &TrainConfig) -> Result<PairInputs, MatchError> {
        let bbox_s = graph_s.bbox().ok_or(MatchError::EmptyGraph("source"))?;
        let bbox_t = graph_t.bbox().ok_or(MatchError::EmptyGraph("target"))?;
        let (x_s, x_t) = if cfg.raw_coordinates {
            (raw_coordinates(graph_s), raw_coordinates(graph_t))
        } else if cfg.shared_bbox {
            let shared = bbox_s.union(&bbox_t);
            (
                PseudoCoordinates::build_in(graph_s, shared).coords,
                PseudoCoordinates::build_in(graph_t, shared).coords,
            )
        } else {
            (PseudoCoordinates::build(graph_s).coords, PseudoCoordinates::build(graph_t).coords)
        };
        let d = pairwise_distance(&x_s, &x_t);
        Ok(PairInputs {
            x_s,
            x_t,
            edges_s: EdgeFeatures::build(graph_s).normalized(),
            edges_t: EdgeFeatures::build(graph_t).normalized(),
            graph_s: message_graph(graph_s),
            graph_t: message_graph(graph_t),
            d,
            t: struct_diff(graph_s, graph_t),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub loss: Var,
    pub s: Var,
    pub padded: Var,
    pub fused: Var,
    pub alpha: Var,
}

/// Records the full matching forward pass: encoders, feature similarity,
/// kernel, fusion, Sinkhorn and loss.
pub fn forward_on_tape(tape: &mut Tape, vars: &ModelVars, inputs: &PairInputs, cfg: &TrainConfig) -> ForwardVars {
    let xs = tape.constant(inputs.x_s.clone());
    let es = tape.constant(inputs.edges_s.clone());
    let hs = encode_on_tape(tape, vars, xs, &inputs.graph_s, es);
    let xt = tape.constant(inputs.x_t.clone());
    let et = tape.constant(inputs.edges_t.clone());
    let ht = encode_on_tape(tape, vars, xt, &inputs.graph_t, et);
    let ht_t = tape.transpose(ht);
    let feat = tape.matmul(hs, ht_t);

    let d = tape.constant(inputs.d.clone());
    let t = tape.constant(inputs.t.clone());
    let kernel = kernel_on_tape(tape, vars.kernel, d);
    let fused = fuse_on_tape(tape, feat, kernel, vars.alpha);
    let sk = sinkhorn_on_tape(tape, fused, cfg.sinkhorn_iters);
    let loss = loss_on_tape(tape, d, t, sk.cropped, cfg.lambda);
    ForwardVars {
        loss,
        s: sk.cropped,
        padded: sk.padded,
        fused,
        alpha: vars.alpha,
    }
}

/// Records `alpha * feat + (1 - alpha) * kernel` for a 1x1 `alpha`.
pub fn fuse_on_tape(tape: &mut Tape, feat: Var, kernel: Var, alpha: Var) -> Var {
    let neg = tape.neg(alpha);
    let one_minus = tape.add_scalar(neg, 1.0);
    let a = tape.scale_by(feat, alpha);
    let b = tape.scale_by(kernel, one_minus);
    tape.add(a, b)
}

/// Relaxed correspondence with its pre-normalization scores.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub s: Matrix,
    pub raw_fused: Matrix,
    pub padded_size: usize,
}

/// Fuses feature scores with the spatial kernel of `d` and normalizes.
pub fn fuse(feat: &Matrix, d: &Matrix, kernel: &KernelParams, alpha: f64, iters: usize) -> SimilarityMatrix {
    assert_eq!(feat.shape(), d.shape(), "fuse: shape mismatch");
    let k = kernel_apply(d, kernel);
    let mut tape = Tape::new();
    let fv = tape.constant(feat.clone());
    let kv = tape.constant(k);
    let av = tape.constant(Matrix::scalar(alpha));
    let m = fuse_on_tape(&mut tape, fv, kv, av);
    let sk = sinkhorn_on_tape(&mut tape, m, iters);
    SimilarityMatrix {
        s: tape.value(sk.cropped).clone(),
        raw_fused: tape.value(m).clone(),
        padded_size: tape.shape(sk.padded).0,
    }
}

/// Loss value and its gradient for every tensor of `params`, in
/// [`ModelParams::named_tensors`] order.
pub fn loss_and_gradients(params: &ModelParams, inputs: &PairInputs, cfg: &TrainConfig) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, cfg.alpha_fixed);
    let fwd = forward_on_tape(&mut tape, &vars, inputs, cfg);
    let loss = tape.value(fwd.loss).item();
    let mut grads = tape.backward(fwd.loss);
    (loss, vars.leaves().into_iter().map(|v| grads.take(v)).collect())
}

/// Loss value only.
pub fn evaluate_loss(params: &ModelParams, inputs: &PairInputs, cfg: &TrainConfig) -> f64 {
    let mut tape = Tape::new();
    let vars = params.to_tape(&mut tape, cfg.alpha_fixed);
    let fwd = forward_on_tape(&mut tape, &vars, inputs, cfg);
    tape.value(fwd.loss).item()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    /// Number of optimizer updates applied before this evaluation.
    pub epoch: usize,
    pub loss: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub similarity: SimilarityMatrix,
    /// `epochs + 1` entries; the last is evaluated with the final parameters.
    pub trace: Vec<TraceEntry>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.loss)
    }

    pub fn final_alpha(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.alpha)
    }
}

/// Full-batch unsupervised training on one graph pair.
pub fn train_pair(graph_s: &RoadGraph, graph_t: &RoadGraph, cfg: &TrainConfig) -> Result<TrainOutcome, MatchError> {
    cfg.validate()?;
    let inputs = PairInputs::prepare(graph_s, graph_t, cfg)?;
    train_prepared(&inputs, cfg)
}

pub fn train_prepared(inputs: &PairInputs, cfg: &TrainConfig) -> Result<TrainOutcome, MatchError> {
    let mut params = ModelParams::init(cfg.seed);
    let mut values: Vec<Matrix> = params.named_tensors().into_iter().map(|(_, m)| m).collect();
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &values,
    );
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        params.set_tensors(&values);
        let mut tape = Tape::new();
        let vars = params.to_tape(&mut tape, cfg.alpha_fixed);
        let fwd = forward_on_tape(&mut tape, &vars, inputs, cfg);
        let loss = tape.value(fwd.loss).item();
        let alpha = tape.value(fwd.alpha).item();
        if !loss.is_finite() {
            return Err(MatchError::NonFinite { epoch, loss });
        }
        trace.push(TraceEntry { epoch, loss, alpha });
        if epoch % 50 == 0 || epoch == cfg.epochs {
            log::debug!("epoch {epoch}: loss {loss:.6} alpha {alpha:.4}");
        }
        if epoch == cfg.epochs {
            let similarity = SimilarityMatrix {
                s: tape.value(fwd.s).clone(),
                raw_fused: tape.value(fwd.fused).clone(),
                padded_size: tape.shape(fwd.padded).0,
            };
            return Ok(TrainOutcome {
                params,
                similarity,
                trace,
            });
        }
        let leaves = vars.leaves();
        let mut grads = tape.backward(fwd.loss);
        let grads: Vec<Matrix> = leaves.into_iter().map(|v| grads.take(v)).collect();
        adam.step(&mut values, &grads);
    }
    unreachable!("the loop returns on its last epoch")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::sinkhorn;
    use crate::model::ModelParams;

    fn small_pair() -> (RoadGraph, RoadGraph) {
        let nodes_s = [("a", 0.0, 0.0), ("b", 0.0, 0.001), ("c", 0.001, 0.001), ("d", 0.001, 0.0), ("e", 0.002, 0.0005)];
        let edges = [("a", "b"), ("b", "c"), ("c", "d"), ("d", "a"), ("c", "e")];
        let s = RoadGraph::from_edges(&nodes_s, &edges).unwrap();
        let nodes_t = [
            ("a", 0.00001, 0.0),
            ("b", 0.0, 0.00102),
            ("c", 0.00099, 0.001),
            ("d", 0.001, 0.00001),
            ("e", 0.00201, 0.0005),
        ];
        let t = RoadGraph::from_edges(&nodes_t, &edges).unwrap();
        (s, t)
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { lambda: 1.5, ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { sinkhorn_iters: 0, ..Default::default() },
            TrainConfig { alpha_fixed: Some(-0.1), ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(MatchError::Config(_))));
        }
    }

    #[test]
    fn fuse_boundaries() {
        let p = ModelParams::init(4);
        let feat = Matrix::from_rows(&[[0.3, -0.2, 1.0], [0.0, 0.5, 0.1]]);
        let d = Matrix::from_rows(&[[0.1, 0.9, 0.4], [0.7, 0.0, 1.2]]);
        let k = kernel_apply(&d, &p.kernel);
        assert_eq!(fuse(&feat, &d, &p.kernel, 1.0, 20).s, sinkhorn(&feat, 20).s);
        assert_eq!(fuse(&feat, &d, &p.kernel, 0.0, 20).s, sinkhorn(&k, 20).s);
        let half = fuse(&k, &d, &p.kernel, 0.5, 20);
        assert!(half.s.max_abs_diff(&sinkhorn(&k, 20).s) < 1e-15);
        assert_eq!(half.padded_size, 3);
    }

    #[test]
    fn trace_has_one_entry_per_update_plus_final() {
        let (s, t) = small_pair();
        let cfg = TrainConfig { epochs: 5, ..Default::default() };
        let out = train_pair(&s, &t, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        assert_eq!(out.trace[0].alpha, 0.5);
        assert!(out.trace.iter().all(|e| e.loss.is_finite() && e.alpha > 0.0 && e.alpha < 1.0));
        // The final entry is evaluated with the returned parameters.
        let inputs = PairInputs::prepare(&s, &t, &cfg).unwrap();
        assert_eq!(evaluate_loss(&out.params, &inputs, &cfg), out.final_loss());
    }

    #[test]
    fn deterministic_per_seed() {
        let (s, t) = small_pair();
        let cfg = TrainConfig { epochs: 10, seed: 3, ..Default::default() };
        let a = train_pair(&s, &t, &cfg).unwrap();
        let b = train_pair(&s, &t, &cfg).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.similarity, b.similarity);
    }

    #[test]
    fn fixed_alpha_is_respected() {
        let (s, t) = small_pair();
        let cfg = TrainConfig { epochs: 3, alpha_fixed: Some(0.25), ..Default::default() };
        let out = train_pair(&s, &t, &cfg).unwrap();
        assert!(out.trace.iter().all(|e| e.alpha == 0.25));
        assert_eq!(out.params.fusion.a, 0.0);
    }

    #[test]
    fn empty_graph_is_rejected() {
        let (s, _) = small_pair();
        let empty = RoadGraph::from_edges(&[], &[]).unwrap();
        assert_eq!(
            train_pair(&s, &empty, &TrainConfig::default()).unwrap_err(),
            MatchError::EmptyGraph("target")
        );
    }

    #[test]
    fn shared_bbox_changes_inputs_only_when_extents_differ() {
        let (s, t) = small_pair();
        let own = PairInputs::prepare(&s, &s, &TrainConfig::default()).unwrap();
        let shared = PairInputs::prepare(&s, &s, &TrainConfig { shared_bbox: true, ..Default::default() }).unwrap();
        assert_eq!(own.x_s, shared.x_s);
        let own = PairInputs::prepare(&s, &t, &TrainConfig::default()).unwrap();
        let shared = PairInputs::prepare(&s, &t, &TrainConfig { shared_bbox: true, ..Default::default() }).unwrap();
        assert_ne!(own.x_s, shared.x_s);
        assert_eq!(own.x_t, shared.x_t);
    }
}
