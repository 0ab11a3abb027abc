//! Simulator of a quantized photonic reservoir computer and the
//! human-action classification pipeline built on top of it: frame loading,
//! HOG features, PCA reduction, reservoir dynamics, a ridge-regression
//! readout and sequence-level classification.

pub mod cache;
pub mod classify;
pub mod dataset;
pub mod error;
pub mod experiment;
pub mod hog;
pub mod pca;
pub mod pipeline;
pub mod readout;
pub mod reservoir;
pub mod rng;
pub mod tuning;

pub use error::{Error, ErrorKind, Result};
pub use pca::Rows;
