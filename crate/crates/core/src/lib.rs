//! Unsupervised road-network map-to-map matching.

pub mod autodiff;
pub mod eval;
pub mod features;
pub mod geo;
pub mod graph;
pub mod io;
pub mod matching;
pub mod model;
pub mod noise;
pub mod tiler;
pub mod viz;
