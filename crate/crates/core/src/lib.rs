//! Lumbar spine geometry reconstruction by template deformation.
//!
//! The crate bundles a small f64 autodiff engine, attention layers with
//! relative position embedding, two template-deformation networks plus a
//! shape-error estimator, a synthetic phantom generator, and the geometric
//! and medical-parameter measurements used to evaluate reconstructions.

pub mod attention;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;

pub use tensor::{Adam, Tensor, TensorError};
