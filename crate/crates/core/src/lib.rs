//! Geometry, consistency losses and test-time depth refinement for
//! omnidirectional (360°) images and video.

pub mod alignment;
pub mod disparity;
pub mod error;
pub mod grid;
pub mod io;
pub mod objectives;
pub mod optimizer;
pub mod sphere;
pub mod synth;
pub mod temporal;

pub use error::{Error, Result};
pub use grid::{bilinear_sample, CubemapGrid, ErpGrid, Face};
