use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::camera::{CameraIntrinsics, CameraPose, View};
use super::image::ImageGrid;

/// Output of a plane-induced warp: the resampled grid and a per-pixel flag
/// telling whether the source sample was in bounds.
#[derive(Debug, Clone)]
pub struct WarpedGrid {
    pub grid: ImageGrid,
    pub valid: Vec<bool>,
}

/// Maps destination pixels to source pixels through the fronto-parallel plane
/// `z_dst = depth` of the destination camera.
#[derive(Debug, Clone, Copy)]
pub struct PlaneHomography {
    // source-pixel homogeneous coords = depth * m * [u, v, 1] + k_src * t_rel
    m: Matrix3<f64>,
    kt: Vector3<f64>,
    depth: f64,
}

impl PlaneHomography {
    pub fn new(
        k_src: &CameraIntrinsics,
        pose_src: &CameraPose,
        k_dst: &CameraIntrinsics,
        pose_dst: &CameraPose,
        depth: f64,
    ) -> Self {
        let rel = pose_dst.relative_to(pose_src);
        let k_s = Matrix3::new(k_src.fx, 0.0, k_src.cx, 0.0, k_src.fy, k_src.cy, 0.0, 0.0, 1.0);
        let k_d_inv = Matrix3::new(
            1.0 / k_dst.fx,
            0.0,
            -k_dst.cx / k_dst.fx,
            0.0,
            1.0 / k_dst.fy,
            -k_dst.cy / k_dst.fy,
            0.0,
            0.0,
            1.0,
        );
        Self {
            m: k_s * rel.rotation_matrix() * k_d_inv,
            kt: k_s * rel.translation,
            depth,
        }
    }

    /// Source pixel for destination pixel `(x, y)`, or `None` when the plane
    /// point lies behind the source camera.
    #[inline]
    pub fn map(&self, x: f64, y: f64) -> Option<Vector2<f64>> {
        let h = self.m * Vector3::new(x, y, 1.0) * self.depth + self.kt;
        if h.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(h.x / h.z, h.y / h.z))
    }
}

/// Warps `src` (sampled in camera `k_src`/`pose_src`) into the destination
/// camera through the plane at `depth`. Grids are assumed to match their
/// intrinsics.
pub fn warp_grid(
    src: &ImageGrid,
    k_src: &CameraIntrinsics,
    pose_src: &CameraPose,
    k_dst: &CameraIntrinsics,
    pose_dst: &CameraPose,
    depth: f64,
) -> WarpedGrid {
    let hom = PlaneHomography::new(k_src, pose_src, k_dst, pose_dst, depth);
    let (h, w, ch) = (k_dst.height, k_dst.width, src.channels());
    let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut data = vec![0.0; w * ch];
            let mut valid = vec![false; w];
            for c in 0..w {
                if let Some(p) = hom.map(c as f64, r as f64) {
                    valid[c] = src.sample_bilinear(p.x, p.y, &mut data[c * ch..(c + 1) * ch]);
                }
                if !valid[c] {
                    data[c * ch..(c + 1) * ch].fill(0.0);
                }
            }
            (data, valid)
        })
        .collect();
    let mut data = Vec::with_capacity(h * w * ch);
    let mut valid = Vec::with_capacity(h * w);
    for (d, v) in rows {
        data.extend(d);
        valid.extend(v);
    }
    WarpedGrid {
        grid: ImageGrid::from_vec(h, w, ch, data).expect("warp output shape"),
        valid,
    }
}

/// Plane-sweep warp of `src` (an image of `view_src`) into `view_dst` through
/// the fronto-parallel plane at `depth` in the destination camera. Samples
/// falling outside the source image are zero and flagged invalid.
pub fn homography_warp(src: &ImageGrid, view_src: &View, view_dst: &View, depth: f64) -> WarpedGrid {
    warp_grid(
        src,
        &view_src.intrinsics,
        &view_src.pose,
        &view_dst.intrinsics,
        &view_dst.pose,
        depth,
    )
}
