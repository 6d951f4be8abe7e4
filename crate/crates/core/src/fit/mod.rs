//! Two-view reconstruction driver: a non-learned forward pass and per-scene
//! optimization of the resulting splats.

mod adam;
mod forward;
mod optimize;

pub use adam::{adam_step, AdamParams, AdamState};
pub use forward::{forward_reconstruct, ForwardResult, ReconstructConfig};
pub use optimize::{
    fit_from, fit_scene, FitConfig, FitInputs, FitReport, LearningRates, StepLosses, KAPPA_FLOOR,
    NORMAL_SCALES,
};
