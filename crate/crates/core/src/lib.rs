//! Differentiator-integrator surrogates for 2D advection-diffusion-reaction
//! fields: grids and stencils, a small reverse-mode engine, ground-truth data
//! generation, the hybrid model, two-stage training, evaluation metrics and
//! the on-disk formats.

pub mod autodiff;
pub mod dataset;
pub mod dns;
pub mod error;
pub mod fdops;
pub mod fields;
pub mod io;
pub mod metrics;
pub mod model;
pub mod training;

pub use error::{Error, Result};
