//! Dense-matrix reverse-mode automatic differentiation.
//!
//! A [`Tape`] records operations on [`Matrix`] values; [`Tape::backward`]
//! consumes it and returns gradients for every leaf created with
//! [`Tape::param`].

mod adam;
mod matrix;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use matrix::Matrix;
pub use tape::{Gradients, MessageGraph, Tape, Var};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
}
