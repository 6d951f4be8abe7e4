use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::pfm::read_pfm;
use super::png::read_png;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, CameraPose, ImageGrid, View};

const QUAT_NORM_TOL: f64 = 1e-6;

/// One camera entry. `quaternion_wxyz` and `translation` give the
/// world-to-camera transform. File names are relative to the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub quaternion_wxyz: [f64; 4],
    pub translation: [f64; 3],
    pub near: f64,
    pub far: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normal: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pseudo_normal: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub cameras: Vec<CameraEntry>,
}

impl CameraEntry {
    pub fn from_view(view: &View, image: impl Into<String>) -> Self {
        let k = &view.intrinsics;
        let q = view.pose.rotation.quaternion();
        let t = view.pose.translation;
        Self {
            image: image.into(),
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
            quaternion_wxyz: [q.w, q.i, q.j, q.k],
            translation: [t.x, t.y, t.z],
            near: view.near,
            far: view.far,
            depth: None,
            normal: None,
            pseudo_normal: None,
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height)
    }

    /// Rejects quaternions further than 1e-6 from unit norm, then renormalizes.
    pub fn pose(&self) -> Result<CameraPose> {
        let [w, x, y, z] = self.quaternion_wxyz;
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !((n - 1.0).abs() <= QUAT_NORM_TOL) {
            return Err(Error::invalid(
                "quaternion_wxyz",
                format!("norm {n} is not within {QUAT_NORM_TOL} of 1"),
            ));
        }
        if self.translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("translation", "must be finite"));
        }
        // renormalizing an already unit quaternion would perturb its last bits
        let rotation = if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::from_quaternion(q)
        };
        Ok(CameraPose::new(rotation, Vector3::from(self.translation)))
    }
}

pub fn parse_cameras(text: &str, path: &Path) -> Result<CameraFile> {
    let file: CameraFile = serde_json::from_str(text).map_err(|e| Error::format(path, e.to_string()))?;
    if file.cameras.is_empty() {
        return Err(Error::format(path, "no cameras"));
    }
    Ok(file)
}

pub fn read_cameras(path: impl AsRef<Path>) -> Result<CameraFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cameras(&text, path)
}

pub fn write_cameras(path: impl AsRef<Path>, file: &CameraFile) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(file).expect("camera file serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Views plus whatever per-view maps the camera file points at.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub views: Vec<View>,
    pub depths: Vec<Option<ImageGrid>>,
    pub normals: Vec<Option<ImageGrid>>,
    pub pseudo_normals: Vec<Option<ImageGrid>>,
}

fn with_context(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { .. } | Error::Format { .. } => e,
        other => Error::format(path, other.to_string()),
    }
}

fn check_map(grid: ImageGrid, entry: &CameraEntry, channels: usize, path: &Path) -> Result<ImageGrid> {
    if grid.height() != entry.height || grid.width() != entry.width || grid.channels() != channels {
        return Err(Error::format(
            path,
            format!(
                "map is {}x{}x{}, camera expects {}x{}x{channels}",
                grid.height(),
                grid.width(),
                grid.channels(),
                entry.height,
                entry.width
            ),
        ));
    }
    Ok(grid)
}

/// Loads the camera file and every image and map it references.
pub fn load_bundle(cameras_json: impl AsRef<Path>) -> Result<Bundle> {
    let json = cameras_json.as_ref();
    let file = read_cameras(json)?;
    let dir = json.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |name: &str| -> PathBuf { dir.join(name) };
    let mut bundle = Bundle {
        views: Vec::new(),
        depths: Vec::new(),
        normals: Vec::new(),
        pseudo_normals: Vec::new(),
    };
    for entry in &file.cameras {
        let k = entry.intrinsics().map_err(|e| with_context(e, json))?;
        let pose = entry.pose().map_err(|e| with_context(e, json))?;
        let image_path = resolve(&entry.image);
        let image = read_png(&image_path)?;
        let view =
            View::new(image, k, pose, entry.near, entry.far).map_err(|e| with_context(e, &image_path))?;
        let load = |name: &Option<String>, channels: usize| -> Result<Option<ImageGrid>> {
            name.as_deref()
                .map(|n| {
                    let p = resolve(n);
                    check_map(read_pfm(&p)?, entry, channels, &p)
                })
                .transpose()
        };
        bundle.depths.push(load(&entry.depth, 1)?);
        bundle.normals.push(load(&entry.normal, 3)?);
        bundle.pseudo_normals.push(load(&entry.pseudo_normal, 3)?);
        bundle.views.push(view);
    }
    Ok(bundle)
}
