use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::raycast::{raycast_render, OracleRender};
use super::shapes::{make_scene, SceneKind, SceneSpec};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, ImageGrid, View};
use crate::meshing::TriangleMesh;

/// Forward-looking camera row used to photograph a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length in pixels.
    pub focal: f64,
    /// Spacing between neighboring camera centers along world x.
    pub baseline: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            count: 2,
            width: 128,
            height: 128,
            focal: 128.0,
            baseline: 0.2,
            near: 0.5,
            far: 15.0,
        }
    }
}

/// Cameras share identity orientation (+z forward) and sit on a line along x
/// through a kind-specific anchor inside or in front of the scene.
pub fn camera_rig(spec: &SceneSpec, cfg: &RigConfig) -> Result<Vec<(CameraIntrinsics, CameraPose)>> {
    if cfg.count == 0 {
        return Err(Error::invalid("rig count", "need at least one camera"));
    }
    let k = CameraIntrinsics::new(
        cfg.focal,
        cfg.focal,
        (cfg.width as f64 - 1.0) / 2.0,
        (cfg.height as f64 - 1.0) / 2.0,
        cfg.width,
        cfg.height,
    )?;
    let anchor = match spec.kind {
        SceneKind::TexturedPlane => Vector3::zeros(),
        SceneKind::BoxRoom => Vector3::new(0.0, 0.0, -0.2 * spec.dims[2]),
        SceneKind::SphereRoom => Vector3::new(0.0, 0.0, -0.3 * spec.dims[0]),
    };
    let mid = (cfg.count as f64 - 1.0) / 2.0;
    Ok((0..cfg.count)
        .map(|i| {
            let c = anchor + Vector3::new((i as f64 - mid) * cfg.baseline, 0.0, 0.0);
            (k, CameraPose::from_center(UnitQuaternion::identity(), c))
        })
        .collect())
}

/// A synthetic scene with its ground-truth mesh, posed views and oracle maps.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub mesh: TriangleMesh,
    pub views: Vec<View>,
    pub renders: Vec<OracleRender>,
}

pub fn synthesize(spec: &SceneSpec, rig: &RigConfig) -> Result<SyntheticScene> {
    let mesh = make_scene(spec)?;
    let cams = camera_rig(spec, rig)?;
    synthesize_with_cameras(spec, &mesh, &cams, rig.near, rig.far)
}

pub fn synthesize_with_cameras(
    spec: &SceneSpec,
    mesh: &TriangleMesh,
    cams: &[(CameraIntrinsics, CameraPose)],
    near: f64,
    far: f64,
) -> Result<SyntheticScene> {
    let mut views = Vec::with_capacity(cams.len());
    let mut renders = Vec::with_capacity(cams.len());
    for (k, pose) in cams {
        let blank = View::new(ImageGrid::zeros(k.height, k.width, 3), *k, *pose, near, far)?;
        let render = raycast_render(mesh, &blank, &spec.texture);
        views.push(View {
            image: render.image.clone(),
            ..blank
        });
        renders.push(render);
    }
    Ok(SyntheticScene {
        spec: spec.clone(),
        mesh: mesh.clone(),
        views,
        renders,
    })
}
