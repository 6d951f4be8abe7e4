use nalgebra::Vector3;

use super::marching::marching_cubes;
use super::mesh::TriangleMesh;
use super::tsdf::{tsdf_integrate, TsdfConfig, TsdfVolume};
use crate::error::{Error, Result};
use crate::gaussian_field::SplatField;
use crate::geometry::{CameraPose, View};
use crate::rasterizer::{render, RenderConfig};

/// Keeps the faces whose centroid lies inside at least one view frustum.
pub fn frustum_cull_mesh(mesh: &TriangleMesh, views: &[View]) -> TriangleMesh {
    mesh.filter_faces(|f| {
        let c = mesh.face_centroid(f);
        views.iter().any(|v| v.in_frustum(&c))
    })
}

/// Keeps the points inside at least one view frustum, in order.
pub fn frustum_cull_points(points: &[Vector3<f64>], views: &[View]) -> Vec<Vector3<f64>> {
    points
        .iter()
        .filter(|p| views.iter().any(|v| v.in_frustum(p)))
        .copied()
        .collect()
}

/// `n` poses strictly between `a` and `b`: camera centers interpolated
/// linearly, orientations by slerp.
pub fn interpolate_poses(a: &CameraPose, b: &CameraPose, n: usize) -> Vec<CameraPose> {
    let (ra, rb) = (a.rotation.inverse(), b.rotation.inverse());
    let (ca, cb) = (a.center(), b.center());
    (1..=n)
        .map(|k| {
            let t = k as f64 / (n + 1) as f64;
            let rot = ra
                .try_slerp(&rb, t, 1e-12)
                .unwrap_or(if t < 0.5 { ra } else { rb });
            CameraPose::from_center(rot, ca.lerp(&cb, t))
        })
        .collect()
}

/// Camera-only views used for fusion: the inputs followed by the interpolated
/// poses between each consecutive pair (intrinsics of the earlier view, the
/// pair's widest depth range).
pub fn fusion_views(views: &[View], interpolated: usize) -> Result<Vec<View>> {
    let mut out: Vec<View> = views
        .iter()
        .map(|v| View::camera_only(v.intrinsics, v.pose, v.near, v.far))
        .collect::<Result<_>>()?;
    for pair in views.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        for pose in interpolate_poses(&a.pose, &b.pose, interpolated) {
            out.push(View::camera_only(
                a.intrinsics,
                pose,
                a.near.min(b.near),
                a.far.max(b.far),
            )?);
        }
    }
    Ok(out)
}

/// Result of depth fusion: the culled mesh plus the volume it came from.
#[derive(Debug, Clone)]
pub struct MeshExtraction {
    pub mesh: TriangleMesh,
    pub volume: TsdfVolume,
    pub fused_views: usize,
}

/// Renders depth at the input poses and the interpolated ones, fuses them into
/// a fresh sparse TSDF volume, runs marching cubes and culls against the
/// input views. Rendered depths outside `[near, far_fraction * far]` of their
/// view are not fused.
pub fn extract_mesh(
    field: &SplatField,
    views: &[View],
    cfg: &TsdfConfig,
    render_cfg: &RenderConfig,
) -> Result<MeshExtraction> {
    cfg.validate()?;
    if field.is_empty() {
        return Err(Error::invalid("splat field", "nothing to mesh"));
    }
    if views.is_empty() {
        return Err(Error::invalid("views", "need at least one view"));
    }
    let fusion = fusion_views(views, cfg.interpolated_poses)?;
    let mut volume = TsdfVolume::new(cfg.voxel_size, cfg.truncation, cfg.max_voxels)?;
    for v in &fusion {
        let out = render(field, v, render_cfg);
        let far = cfg.far_fraction * v.far;
        let valid: Vec<bool> = out
            .acc
            .data()
            .iter()
            .zip(out.depth.data())
            .map(|(&a, &d)| a >= cfg.min_acc && d >= v.near && d <= far)
            .collect();
        tsdf_integrate(&mut volume, &out.depth, Some(&valid), v)?;
    }
    let mesh = frustum_cull_mesh(&marching_cubes(&volume), views);
    Ok(MeshExtraction {
        mesh,
        volume,
        fused_views: fusion.len(),
    })
}
