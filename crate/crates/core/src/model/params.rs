use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Matrix, Tape, Var};

pub const HIDDEN: usize = 32;
pub const GATE_HIDDEN: usize = 8;
pub const KERNEL_HIDDEN: usize = 32;
pub const INPUT_DIM: usize = 2;
pub const LAYERS: usize = 3;

const FORMAT: &str = "mapmatch-params";
const VERSION: u32 = 1;

/// Weights of a per-entry `1 -> H -> 1` network with a relu hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMlpParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `fan_in x fan_out`, applied as `h * W`.
    pub weight: Matrix,
    /// `1 x fan_out`.
    pub bias: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<DenseLayer>,
    /// Edge gate network over normalized edge lengths.
    pub gate: ScalarMlpParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    pub net: ScalarMlpParams,
}

/// Unconstrained logit behind the fusion weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParam {
    pub a: f64,
}

impl FusionParam {
    pub fn alpha(&self) -> f64 {
        1.0 / (1.0 + (-self.a).exp())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub kernel: KernelParams,
    pub fusion: FusionParam,
}

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed parameter file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported parameter file format {format:?} version {version}")]
    Format { format: String, version: u32 },
    #[error("tensor {name}: {problem}")]
    Tensor { name: String, problem: String },
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    tensors: Vec<TensorRecord>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound))
}

impl ScalarMlpParams {
    fn init(rng: &mut ChaCha8Rng, hidden: usize) -> ScalarMlpParams {
        let w1 = glorot(rng, 1, hidden);
        let w2 = glorot(rng, hidden, 1);
        ScalarMlpParams {
            w1,
            b1: Matrix::zeros(1, hidden),
            w2,
            b2: Matrix::zeros(1, 1),
        }
    }

    /// Evaluates the network on a single scalar.
    pub fn eval(&self, x: f64) -> f64 {
        let mut y = self.b2.item();
        for k in 0..self.w1.cols() {
            let z = self.w1.get(0, k) * x + self.b1.get(0, k);
            if z > 0.0 {
                y += self.w2.get(k, 0) * z;
            }
        }
        y
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases and a zero fusion logit, drawn
    /// from a ChaCha8 stream seeded with `seed`.
    pub fn init(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [INPUT_DIM, HIDDEN, HIDDEN, HIDDEN];
        let layers = (0..LAYERS)
            .map(|l| DenseLayer {
                weight: glorot(&mut rng, dims[l], dims[l + 1]),
                bias: Matrix::zeros(1, dims[l + 1]),
            })
            .collect();
        let gate = ScalarMlpParams::init(&mut rng, GATE_HIDDEN);
        let kernel = ScalarMlpParams::init(&mut rng, KERNEL_HIDDEN);
        ModelParams {
            encoder: EncoderParams { layers, gate },
            kernel: KernelParams { net: kernel },
            fusion: FusionParam { a: 0.0 },
        }
    }

    /// Every tensor with its stable name, in a fixed order. The fusion logit
    /// appears as a 1x1 tensor.
    pub fn named_tensors(&self) -> Vec<(String, Matrix)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.layer{l}.weight"), layer.weight.clone()));
            out.push((format!("encoder.layer{l}.bias"), layer.bias.clone()));
        }
        for (prefix, net) in [("encoder.gate", &self.encoder.gate), ("kernel", &self.kernel.net)] {
            out.push((format!("{prefix}.w1"), net.w1.clone()));
            out.push((format!("{prefix}.b1"), net.b1.clone()));
            out.push((format!("{prefix}.w2"), net.w2.clone()));
            out.push((format!("{prefix}.b2"), net.b2.clone()));
        }
        out.push(("fusion.a".to_string(), Matrix::scalar(self.fusion.a)));
        out
    }

    /// Mutable views in the order of [`ModelParams::named_tensors`], except
    /// the fusion logit which is returned separately.
    fn tensors_mut(&mut self) -> (Vec<&mut Matrix>, &mut f64) {
        let mut out = Vec::new();
        for layer in &mut self.encoder.layers {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        for net in [&mut self.encoder.gate, &mut self.kernel.net] {
            out.push(&mut net.w1);
            out.push(&mut net.b1);
            out.push(&mut net.w2);
            out.push(&mut net.b2);
        }
        (out, &mut self.fusion.a)
    }

    /// Overwrites every tensor (fusion logit last) from `values`.
    pub fn set_tensors(&mut self, values: &[Matrix]) {
        let (mut tensors, a) = self.tensors_mut();
        assert_eq!(values.len(), tensors.len() + 1, "tensor count");
        for (t, v) in tensors.iter_mut().zip(values) {
            assert_eq!(t.shape(), v.shape(), "tensor shape");
            **t = v.clone();
        }
        *a = values[values.len() - 1].item();
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Records every tensor as a trainable leaf. With `fixed_alpha` the
    /// fusion weight is a constant instead of `logistic(a)`.
    pub fn to_tape(&self, tape: &mut Tape, fixed_alpha: Option<f64>) -> ModelVars {
        let mlp = |tape: &mut Tape, p: &ScalarMlpParams| MlpVars {
            w1: tape.param(p.w1.clone()),
            b1: tape.param(p.b1.clone()),
            w2: tape.param(p.w2.clone()),
            b2: tape.param(p.b2.clone()),
        };
        let layers = self
            .encoder
            .layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect();
        let gate = mlp(tape, &self.encoder.gate);
        let kernel = mlp(tape, &self.kernel.net);
        let logit = tape.param(Matrix::scalar(self.fusion.a));
        let alpha = match fixed_alpha {
            Some(v) => tape.constant(Matrix::scalar(v)),
            None => tape.sigmoid(logit),
        };
        ModelVars {
            layers,
            gate,
            kernel,
            logit,
            alpha,
        }
    }

    pub fn to_json(&self) -> String {
        let manifest = Manifest {
            format: FORMAT.to_string(),
            version: VERSION,
            tensors: self
                .named_tensors()
                .into_iter()
                .map(|(name, m)| TensorRecord {
                    name,
                    shape: [m.rows(), m.cols()],
                    values: m.into_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&manifest).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<ModelParams, ParamsError> {
        let manifest: Manifest = serde_json::from_str(text)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(ParamsError::Format {
                format: manifest.format,
                version: manifest.version,
            });
        }
        let mut params = ModelParams::init(0);
        let expected = params.named_tensors();
        if manifest.tensors.len() != expected.len() {
            return Err(ParamsError::Tensor {
                name: "*".into(),
                problem: format!("expected {} tensors, found {}", expected.len(), manifest.tensors.len()),
            });
        }
        let mut values = Vec::with_capacity(expected.len());
        for ((name, m), rec) in expected.iter().zip(manifest.tensors) {
            if &rec.name != name {
                return Err(ParamsError::Tensor {
                    name: rec.name,
                    problem: format!("expected tensor {name}"),
                });
            }
            if rec.shape != [m.rows(), m.cols()] {
                return Err(ParamsError::Tensor {
                    name: rec.name,
                    problem: format!("shape {:?}, expected {:?}", rec.shape, m.shape()),
                });
            }
            let t = Matrix::from_vec(m.rows(), m.cols(), rec.values).map_err(|e| ParamsError::Tensor {
                name: name.clone(),
                problem: e.to_string(),
            })?;
            values.push(t);
        }
        params.set_tensors(&values);
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        std::fs::write(path, self.to_json()).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<ModelParams, ParamsError> {
        let text = std::fs::read_to_string(path).map_err(|source| ParamsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ModelParams::from_json(&text)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Tape handles for every parameter, in [`ModelParams::named_tensors`] order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layers: Vec<(Var, Var)>,
    pub gate: MlpVars,
    pub kernel: MlpVars,
    pub logit: Var,
    /// `logistic(logit)`, or a constant when the fusion weight is fixed.
    pub alpha: Var,
}

impl ModelVars {
    pub fn leaves(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for &(w, b) in &self.layers {
            out.push(w);
            out.push(b);
        }
        for m in [self.gate, self.kernel] {
            out.extend([m.w1, m.b1, m.w2, m.b2]);
        }
        out.push(self.logit);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(ModelParams::init(5), ModelParams::init(5));
        assert_ne!(ModelParams::init(5), ModelParams::init(6));
    }

    #[test]
    fn alpha_starts_at_half() {
        assert_eq!(ModelParams::init(1).fusion.alpha(), 0.5);
    }

    #[test]
    fn weights_within_glorot_bound_and_biases_zero() {
        let p = ModelParams::init(9);
        for (name, m) in p.named_tensors() {
            if name.ends_with("bias") || name.contains(".b") || name == "fusion.a" {
                assert!(m.data().iter().all(|&x| x == 0.0), "{name}");
            } else {
                let bound = (6.0 / (m.rows() + m.cols()) as f64).sqrt();
                assert!(m.data().iter().all(|x| x.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn declared_shapes() {
        let p = ModelParams::init(0);
        let shapes: Vec<_> = p.named_tensors().iter().map(|(n, m)| (n.clone(), m.shape())).collect();
        assert_eq!(shapes[0], ("encoder.layer0.weight".into(), (2, 32)));
        assert_eq!(shapes[4], ("encoder.layer2.weight".into(), (32, 32)));
        assert_eq!(shapes[6], ("encoder.gate.w1".into(), (1, 8)));
        assert_eq!(shapes[10], ("kernel.w1".into(), (1, 32)));
        assert_eq!(shapes[12], ("kernel.w2".into(), (32, 1)));
        assert_eq!(shapes.len(), 15);
        assert_eq!(p.parameter_count(), 2 * 32 + 32 + 2 * (32 * 32 + 32) + (8 * 3 + 1) + (32 * 3 + 1) + 1);
    }

    #[test]
    fn json_round_trip() {
        let mut p = ModelParams::init(3);
        p.fusion.a = -0.75;
        let back = ModelParams::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn rejects_wrong_shape_and_version() {
        let p = ModelParams::init(3);
        let text = p.to_json().replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(ModelParams::from_json(&text), Err(ParamsError::Format { .. })));
        let mut v: serde_json::Value = serde_json::from_str(&p.to_json()).unwrap();
        v["tensors"][0]["shape"] = serde_json::json!([3, 32]);
        assert!(matches!(
            ModelParams::from_json(&v.to_string()),
            Err(ParamsError::Tensor { .. })
        ));
    }

    #[test]
    fn tape_leaves_follow_named_order() {
        let p = ModelParams::init(2);
        let mut tape = Tape::new();
        let vars = p.to_tape(&mut tape, None);
        let leaves = vars.leaves();
        for ((_, m), v) in p.named_tensors().iter().zip(&leaves) {
            assert_eq!(tape.value(*v), m);
        }
        assert_eq!(tape.value(vars.alpha).item(), 0.5);
    }
}
