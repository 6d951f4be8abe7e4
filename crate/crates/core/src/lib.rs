//! Two-view surface reconstruction with pixel-aligned 2D Gaussian surfels.
//!
//! The pipeline builds plane-sweep cost volumes from a posed image pair,
//! turns the softmax depth and its confidence into one surfel per pixel,
//! refines the surfels against photometric, weighted-Chamfer and
//! uncertainty-aware normal objectives, and fuses rendered depth into a TSDF
//! from which a mesh is extracted and scored.

pub mod cli;
pub mod cost_volume;
pub mod error;
pub mod evaluation;
pub mod fit;
pub mod gaussian_field;
pub mod geometry;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod meshing;
pub mod rasterizer;
pub mod scene;

pub use error::{Error, Result};
