//! Directional soft lane probability fields: grids, losses, augmentation,
//! synthetic worlds, a small trainable predictor, lane graph fitting and
//! evaluation.

pub mod artifact;
pub mod augment;
pub mod dataset;
pub mod dgf;
pub mod directional;
pub mod error;
pub mod evalmetrics;
pub mod experiment;
pub mod field;
pub mod geom;
pub mod graphgen;
pub mod objective;
pub mod pipeline;
pub mod render;
pub mod synthworld;
pub mod trainer;

pub use error::{DslpError, Result};
