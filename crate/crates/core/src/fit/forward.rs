use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::cost_volume::{
    build_cost_volume, confidence_map, extract_features, make_candidates, softmax_depth, Aggregation,
    DepthSpacing, FEATURE_STRIDE,
};
use crate::error::{Error, Result};
use crate::gaussian_field::{build_pixel_aligned, PixelAlignedConfig, SplatField};
use crate::geometry::{normals_from_depth, ImageGrid, View, UNIT_NORMAL_TOL};

/// Camera centers closer than this (relative to the near plane) are treated
/// as a zero baseline.
const DEGENERATE_BASELINE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructConfig {
    pub depth_bins: usize,
    pub spacing: DepthSpacing,
    pub aggregation: Aggregation,
    pub alpha0: f64,
    pub scale_mult: f64,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        let px = PixelAlignedConfig::default();
        Self {
            depth_bins: 128,
            spacing: DepthSpacing::InverseDepth,
            aggregation: Aggregation::default(),
            alpha0: px.alpha0,
            scale_mult: px.scale_mult,
        }
    }
}

/// Output of the non-learned two-view pass. Per-view arrays are indexed like
/// the input views.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub field: SplatField,
    /// Softmax depth at feature resolution.
    pub coarse_depth: [ImageGrid; 2],
    /// Largest softmax probability at feature resolution.
    pub confidence: [ImageGrid; 2],
    /// Coarse depth upsampled to image resolution.
    pub depth: [ImageGrid; 2],
    /// Unit camera-frame normals used to orient the splats.
    pub normals: [ImageGrid; 2],
    /// Number of pixels whose normal fell back to facing the camera.
    pub normal_fallbacks: [usize; 2],
    pub degenerate_baseline: bool,
}

impl ForwardResult {
    /// Confidence of each splat's source pixel, looked up at feature resolution.
    pub fn splat_confidence(&self) -> Vec<f64> {
        self.field
            .provenance
            .iter()
            .map(|p| {
                let conf = &self.confidence[p.view as usize];
                conf.get(
                    p.row as usize / FEATURE_STRIDE,
                    p.col as usize / FEATURE_STRIDE,
                    0,
                )
            })
            .collect()
    }
}

/// Replaces every normal that is not unit (within tolerance after
/// renormalizing vectors of length > 0.5) by the reversed viewing ray.
fn sanitize_normals(normals: &ImageGrid, view: &View) -> (ImageGrid, usize) {
    let mut out = normals.clone();
    let mut fallbacks = 0;
    for r in 0..normals.height() {
        for c in 0..normals.width() {
            let p = normals.pixel(r, c);
            let n = Vector3::new(p[0], p[1], p[2]);
            let len = n.norm();
            let fixed = if len > 0.5 && len.is_finite() {
                let u = n / len;
                if (u.norm() - 1.0).abs() <= UNIT_NORMAL_TOL {
                    u
                } else {
                    fallbacks += 1;
                    -view.intrinsics.ray(c as f64, r as f64).normalize()
                }
            } else {
                fallbacks += 1;
                -view.intrinsics.ray(c as f64, r as f64).normalize()
            };
            out.pixel_mut(r, c).copy_from_slice(fixed.as_slice());
        }
    }
    (out, fallbacks)
}

/// Features, cost volumes, softmax depth and confidence for both views,
/// bilinear upsampling of the depth to image resolution and one pixel-aligned
/// splat per pixel of each view. Without pseudo normals, normals are derived
/// from the upsampled depth. Pixels without a usable normal face the camera.
pub fn forward_reconstruct(
    views: [&View; 2],
    pseudo_normals: Option<[&ImageGrid; 2]>,
    cfg: &ReconstructConfig,
) -> Result<ForwardResult> {
    let baseline = (views[0].pose.center() - views[1].pose.center()).norm();
    let degenerate_baseline = baseline <= DEGENERATE_BASELINE * views[0].near.min(views[1].near);
    if degenerate_baseline {
        log::warn!("degenerate baseline ({baseline:e}): depth is unconstrained by the cost volume");
    }
    let features = [
        extract_features(&views[0].image)?,
        extract_features(&views[1].image)?,
    ];
    let px = PixelAlignedConfig {
        alpha0: cfg.alpha0,
        scale_mult: cfg.scale_mult,
    };
    let mut field = SplatField::default();
    let mut coarse = Vec::new();
    let mut conf = Vec::new();
    let mut full = Vec::new();
    let mut normals = Vec::new();
    let mut fallbacks = [0; 2];
    for (v, other) in [(0usize, 1usize), (1, 0)] {
        let view = views[v];
        let candidates = make_candidates(view.near, view.far, cfg.depth_bins, cfg.spacing)?;
        let vol = build_cost_volume(
            &features[v],
            &features[other],
            view,
            views[other],
            &candidates,
            &cfg.aggregation,
        )?;
        let d = softmax_depth(&vol);
        let depth = d.upsample_bilinear(FEATURE_STRIDE);
        if (depth.height(), depth.width()) != (view.height(), view.width()) {
            return Err(Error::NonDivisibleSize {
                height: view.height(),
                width: view.width(),
                factor: FEATURE_STRIDE,
            });
        }
        let raw_normals = match pseudo_normals {
            Some(n) => {
                if !n[v].same_shape(&ImageGrid::zeros(view.height(), view.width(), 3)) {
                    return Err(Error::ShapeMismatch(format!(
                        "pseudo normals of view {v} do not match its image"
                    )));
                }
                n[v].clone()
            }
            None => normals_from_depth(&depth, &view.intrinsics),
        };
        let (n, fb) = sanitize_normals(&raw_normals, view);
        fallbacks[v] = fb;
        field.extend(build_pixel_aligned(&depth, &n, view, v as u32, &px)?.field);
        conf.push(confidence_map(&vol));
        coarse.push(d);
        full.push(depth);
        normals.push(n);
    }
    let pair = |mut v: Vec<ImageGrid>| -> [ImageGrid; 2] {
        let b = v.pop().expect("two views");
        let a = v.pop().expect("two views");
        [a, b]
    };
    Ok(ForwardResult {
        field,
        coarse_depth: pair(coarse),
        confidence: pair(conf),
        depth: pair(full),
        normals: pair(normals),
        normal_fallbacks: fallbacks,
        degenerate_baseline,
    })
}
