//! 2D Gaussian surfels and their pixel-aligned construction.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{normal_to_quat, quat_to_normal, unproject, ImageGrid, View, UNIT_NORMAL_TOL};

/// A flat elliptical Gaussian: center, two tangential standard deviations,
/// orientation (normal = local +z), opacity and RGB color.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mu: Vector3<f64>,
    pub scale: Vector2<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl Splat2D {
    pub fn normal(&self) -> Vector3<f64> {
        quat_to_normal(&self.rotation)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self
            .mu
            .iter()
            .chain(self.scale.iter())
            .chain(self.color.iter())
            .all(|v| v.is_finite())
            && self.opacity.is_finite()
            && self.rotation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("splat", "non-finite parameter"));
        }
        if self.scale.iter().any(|&s| s <= 0.0) {
            return Err(Error::invalid(
                "splat.scale",
                format!("must be positive, got {:?}", self.scale),
            ));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::invalid(
                "splat.opacity",
                format!("{} not in [0, 1]", self.opacity),
            ));
        }
        if (self.rotation.coords.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("splat.rotation", "quaternion is not unit"));
        }
        Ok(())
    }
}

/// Source of a pixel-aligned splat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub view: u32,
    pub row: u32,
    pub col: u32,
}

/// A set of splats with the view pixel each one was lifted from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplatField {
    pub splats: Vec<Splat2D>,
    pub provenance: Vec<Provenance>,
}

impl SplatField {
    pub fn new(splats: Vec<Splat2D>, provenance: Vec<Provenance>) -> Result<Self> {
        let f = Self { splats, provenance };
        f.validate()?;
        Ok(f)
    }

    /// Splats without pixel provenance (tagged view `u32::MAX`).
    pub fn from_splats(splats: Vec<Splat2D>) -> Self {
        let provenance = (0..splats.len())
            .map(|_| Provenance {
                view: u32::MAX,
                row: 0,
                col: 0,
            })
            .collect();
        Self { splats, provenance }
    }

    pub fn len(&self) -> usize {
        self.splats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.splats.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.splats.len() != self.provenance.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} splats but {} provenance records",
                self.splats.len(),
                self.provenance.len()
            )));
        }
        self.splats.iter().try_for_each(Splat2D::validate)
    }

    /// Appends `other`, keeping provenance.
    pub fn extend(&mut self, other: SplatField) {
        self.splats.extend(other.splats);
        self.provenance.extend(other.provenance);
    }

    /// Indices of the splats lifted from `view`.
    pub fn indices_of_view(&self, view: u32) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.provenance[i].view == view)
            .collect()
    }
}

/// Settings of [`build_pixel_aligned`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelAlignedConfig {
    pub alpha0: f64,
    pub scale_mult: f64,
}

impl Default for PixelAlignedConfig {
    fn default() -> Self {
        Self {
            alpha0: 0.8,
            scale_mult: 1.0,
        }
    }
}

/// Splats lifted from one view plus the number of pixels skipped for lack of depth.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelAligned {
    pub field: SplatField,
    pub skipped: usize,
}

/// One splat per pixel with positive depth. `depth` (1 channel) and `normal`
/// (3 channels, camera frame) share the resolution of `view.image`. Centers
/// are back-projected, orientations follow the normal rotated to world, and
/// scales cover the pixel footprint `scale_mult * depth / fx`.
pub fn build_pixel_aligned(
    depth: &ImageGrid,
    normal: &ImageGrid,
    view: &View,
    view_index: u32,
    cfg: &PixelAlignedConfig,
) -> Result<PixelAligned> {
    let (h, w) = (view.height(), view.width());
    if (depth.height(), depth.width(), depth.channels()) != (h, w, 1) {
        return Err(Error::ShapeMismatch(format!(
            "depth map is {}x{}x{}, view is {h}x{w}",
            depth.height(),
            depth.width(),
            depth.channels()
        )));
    }
    if (normal.height(), normal.width(), normal.channels()) != (h, w, 3) {
        return Err(Error::ShapeMismatch(format!(
            "normal map is {}x{}x{}, view is {h}x{w}",
            normal.height(),
            normal.width(),
            normal.channels()
        )));
    }
    if !(0.0..=1.0).contains(&cfg.alpha0) {
        return Err(Error::invalid("alpha0", format!("{} not in [0, 1]", cfg.alpha0)));
    }
    if !(cfg.scale_mult > 0.0 && cfg.scale_mult.is_finite()) {
        return Err(Error::invalid(
            "scale_mult",
            format!("must be positive, got {}", cfg.scale_mult),
        ));
    }
    let cam_to_world = view.pose.rotation.inverse();
    let k = &view.intrinsics;
    let rows: Vec<Result<Vec<(Splat2D, Provenance)>>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut out = Vec::with_capacity(w);
            for c in 0..w {
                let d = depth.get(r, c, 0);
                if !(d > 0.0) {
                    continue;
                }
                let n = normal.pixel(r, c);
                let n_world = cam_to_world * Vector3::new(n[0], n[1], n[2]);
                if (n_world.norm() - 1.0).abs() > UNIT_NORMAL_TOL {
                    return Err(Error::NonUnitNormal(n_world.norm()));
                }
                let mu = unproject(&Vector2::new(c as f64, r as f64), d, k, &view.pose)?;
                let s = cfg.scale_mult * d / k.fx;
                let px = view.image.pixel(r, c);
                out.push((
                    Splat2D {
                        mu,
                        scale: Vector2::new(s, s),
                        rotation: normal_to_quat(&n_world)?,
                        opacity: cfg.alpha0,
                        color: Vector3::new(px[0], px[1], px[2]),
                    },
                    Provenance {
                        view: view_index,
                        row: r as u32,
                        col: c as u32,
                    },
                ));
            }
            Ok(out)
        })
        .collect();
    let mut field = SplatField::default();
    for row in rows {
        for (s, p) in row? {
            field.splats.push(s);
            field.provenance.push(p);
        }
    }
    let skipped = h * w - field.len();
    Ok(PixelAligned { field, skipped })
}

/// Per-splat unit normals `R(q) e_z`.
pub fn field_normals(field: &SplatField) -> Vec<Vector3<f64>> {
    field.splats.iter().map(Splat2D::normal).collect()
}
