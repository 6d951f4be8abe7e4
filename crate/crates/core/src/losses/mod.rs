//! Training objectives and their analytic gradients.

mod angmf;
mod chamfer;
mod kdtree;
mod normal;
mod photometric;
mod pointcloud;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use angmf::{angmf_nll, AngmfValue, ANGLE_CLAMP};
pub use chamfer::{chamfer, nearest_distances, weighted_chamfer, ChamferValue};
pub use kdtree::{brute_force_nearest, KdTree};
pub use normal::{normal_loss, NormalLossValue, NormalPrediction, NormalScale};
pub use photometric::{photometric, ssim, PhotometricValue};
pub use pointcloud::PointCloud;
pub use sampling::{uncertainty_sample, SamplingConfig};

/// Weights of the total loss (`w1`, `w2`, `w3`) and of the photometric
/// terms (`w11` on MSE, `w12` on 1 - SSIM).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w11: f64,
    pub w12: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 5e-3,
            w3: 5e-3,
            w11: 1.0,
            w12: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w1", self.w1),
            ("w2", self.w2),
            ("w3", self.w3),
            ("w11", self.w11),
            ("w12", self.w12),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid("loss weight", format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// `w1 * pho + w2 * wcd + w3 * normal`.
pub fn total_loss(pho: f64, wcd: f64, normal: f64, w: &LossWeights) -> f64 {
    w.w1 * pho + w.w2 * wcd + w.w3 * normal
}
