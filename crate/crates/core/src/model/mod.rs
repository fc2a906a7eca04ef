//! Node encoder, spatial kernel network and their parameters.

mod encoder;
mod kernel;
mod params;

pub use encoder::{encode, encode_matrix, encode_on_tape, message_graph, EncodeError};
pub use kernel::{kernel_apply, kernel_on_tape};
pub use params::{
    DenseLayer, EncoderParams, FusionParam, KernelParams, MlpVars, ModelParams, ModelVars, ParamsError,
    ScalarMlpParams, GATE_HIDDEN, HIDDEN, INPUT_DIM, KERNEL_HIDDEN, LAYERS,
};
