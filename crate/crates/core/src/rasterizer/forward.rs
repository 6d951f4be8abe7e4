use nalgebra::Vector3;
use rayon::prelude::*;

use super::{bin_splats, camera_splats, trace_ray, DepthMode, RenderConfig, ACC_EPS};
use crate::gaussian_field::SplatField;
use crate::geometry::{ImageGrid, View};

/// Rendered maps of one view. `depth` and `normal` are normalized by `acc`
/// where `acc > 1e-4` and zero elsewhere; normals are in the camera frame and
/// face the camera.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub rgb: ImageGrid,
    pub depth: ImageGrid,
    pub normal: ImageGrid,
    pub acc: ImageGrid,
}

struct PixelOut {
    rgb: Vector3<f64>,
    depth: f64,
    normal: Vector3<f64>,
    acc: f64,
}

pub fn render(field: &SplatField, view: &View, cfg: &RenderConfig) -> RenderOutput {
    let splats = camera_splats(field, view);
    let bins = bin_splats(&splats, view, cfg);
    let (h, w) = (view.height(), view.width());
    let k = &view.intrinsics;
    let cutoff_sq = cfg.cutoff_sigma * cfg.cutoff_sigma;
    let pixels: Vec<PixelOut> = (0..h * w)
        .into_par_iter()
        .map(|i| {
            let (r, c) = (i / w, i % w);
            let ray = k.ray(c as f64, r as f64);
            let mut rgb = Vector3::zeros();
            let mut depth = 0.0;
            let mut normal = Vector3::zeros();
            let mut median = None;
            let mut last_depth = 0.0;
            let t = trace_ray(&splats, &bins, bins.tile_of(r, c), c, r, &ray, cutoff_sq, |hit| {
                let s = &splats[hit.index as usize];
                let wt = hit.weight * hit.transmittance;
                rgb += s.color * wt;
                depth += hit.depth * wt;
                normal += s.n * (hit.facing * wt);
                last_depth = hit.depth;
                if median.is_none() && hit.transmittance * (1.0 - hit.weight) <= 0.5 {
                    median = Some(hit.depth);
                }
            });
            let acc = 1.0 - t;
            let (depth, normal) = if acc > ACC_EPS {
                let d = match cfg.depth_mode {
                    DepthMode::Expected => depth / acc,
                    DepthMode::Median => median.unwrap_or(last_depth),
                };
                (d, normal / acc)
            } else {
                (0.0, Vector3::zeros())
            };
            PixelOut {
                rgb,
                depth,
                normal,
                acc,
            }
        })
        .collect();
    let mut out = RenderOutput {
        rgb: ImageGrid::zeros(h, w, 3),
        depth: ImageGrid::zeros(h, w, 1),
        normal: ImageGrid::zeros(h, w, 3),
        acc: ImageGrid::zeros(h, w, 1),
    };
    for (i, p) in pixels.iter().enumerate() {
        let (r, c) = (i / w, i % w);
        out.rgb.pixel_mut(r, c).copy_from_slice(p.rgb.as_slice());
        out.depth.set(r, c, 0, p.depth);
        out.normal.pixel_mut(r, c).copy_from_slice(p.normal.as_slice());
        out.acc.set(r, c, 0, p.acc);
    }
    out
}
