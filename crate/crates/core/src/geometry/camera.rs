use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::image::ImageGrid;
use crate::error::{Error, Result};

/// Pinhole intrinsics. Pixel (0,0) is the top-left pixel center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fx.is_finite()) {
            return Err(Error::invalid("fx", format!("must be positive, got {}", self.fx)));
        }
        if !(self.fy > 0.0 && self.fy.is_finite()) {
            return Err(Error::invalid("fy", format!("must be positive, got {}", self.fy)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("width/height", "image size must be non-zero"));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64) {
            return Err(Error::invalid(
                "cx",
                format!("{} outside [0, {})", self.cx, self.width),
            ));
        }
        if !(self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(Error::invalid(
                "cy",
                format!("{} outside [0, {})", self.cy, self.height),
            ));
        }
        Ok(())
    }

    /// Intrinsics of the image after `factor`x area downsampling.
    pub fn downscaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        let offset = (f - 1.0) / 2.0;
        Self {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - offset) / f,
            cy: (self.cy - offset) / f,
            width: self.width / factor,
            height: self.height / factor,
        }
    }

    /// Camera-frame ray direction through a pixel, scaled to unit z.
    #[inline]
    pub fn ray(&self, x: f64, y: f64) -> Vector3<f64> {
        Vector3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    #[inline]
    pub fn project_camera(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Whether continuous pixel coordinates fall inside the image footprint.
    #[inline]
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= -0.5 && px.y >= -0.5 && px.x < self.width as f64 - 0.5 && px.y < self.height as f64 - 0.5
    }
}

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Pose of a camera centered at `center` with camera-to-world rotation
    /// `cam_to_world`.
    pub fn from_center(cam_to_world: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        let rotation = cam_to_world.inverse();
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.inverse() * (p - self.translation)
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Relative transform taking `self`'s camera frame into `other`'s.
    pub fn relative_to(&self, other: &CameraPose) -> CameraPose {
        let rotation = other.rotation * self.rotation.inverse();
        CameraPose {
            rotation,
            translation: other.translation - rotation * self.translation,
        }
    }
}

/// Posed image with its depth range.
#[derive(Debug, Clone)]
pub struct View {
    pub image: ImageGrid,
    pub intrinsics: CameraIntrinsics,
    pub pose: CameraPose,
    pub near: f64,
    pub far: f64,
}

impl View {
    pub fn new(
        image: ImageGrid,
        intrinsics: CameraIntrinsics,
        pose: CameraPose,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        intrinsics.validate()?;
        if image.height() != intrinsics.height || image.width() != intrinsics.width {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{} but intrinsics say {}x{}",
                image.height(),
                image.width(),
                intrinsics.height,
                intrinsics.width
            )));
        }
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(Error::invalid(
                "near/far",
                format!("need 0 < near < far, got {near} / {far}"),
            ));
        }
        Ok(Self {
            image,
            intrinsics,
            pose,
            near,
            far,
        })
    }

    /// A view without image content, used for rendering at arbitrary poses.
    pub fn camera_only(intrinsics: CameraIntrinsics, pose: CameraPose, near: f64, far: f64) -> Result<Self> {
        let image = ImageGrid::zeros(intrinsics.height, intrinsics.width, 3);
        Self::new(image, intrinsics, pose, near, far)
    }

    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn downsampled(&self, factor: usize) -> Result<View> {
        Ok(View {
            image: self.image.downsample(factor)?,
            intrinsics: self.intrinsics.downscaled(factor),
            pose: self.pose,
            near: self.near,
            far: self.far,
        })
    }

    /// True when `p` (world) lies inside the view frustum, near/far inclusive.
    pub fn in_frustum(&self, p: &Vector3<f64>) -> bool {
        let pc = self.pose.to_camera(p);
        if !(pc.z >= self.near && pc.z <= self.far) {
            return false;
        }
        self.intrinsics.contains(&self.intrinsics.project_camera(&pc))
    }
}

/// Projects a world point; returns pixel coordinates and camera-space depth.
pub fn project(
    point: &Vector3<f64>,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<(Vector2<f64>, f64)> {
    let pc = pose.to_camera(point);
    if pc.z <= 0.0 {
        return Err(Error::BehindCamera(pc.z));
    }
    Ok((intr.project_camera(&pc), pc.z))
}

/// Lifts a pixel at camera-space depth `depth` to world coordinates.
pub fn unproject(
    pixel: &Vector2<f64>,
    depth: f64,
    intr: &CameraIntrinsics,
    pose: &CameraPose,
) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    let pc = intr.ray(pixel.x, pixel.y) * depth;
    Ok(pose.to_world(&pc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(100.0, 100.0, 64.0, 64.0, 128, 128).unwrap()
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let (px, d) = project(&Vector3::new(0.0, 0.0, 2.0), &intr(), &CameraPose::identity()).unwrap();
        assert_eq!((px.x, px.y, d), (64.0, 64.0, 2.0));
    }

    #[test]
    fn off_axis_projection() {
        let (px, d) = project(&Vector3::new(1.0, 0.0, 2.0), &intr(), &CameraPose::identity()).unwrap();
        assert!((px.x - 114.0).abs() < 1e-12 && (px.y - 64.0).abs() < 1e-12);
        assert_eq!(d, 2.0);
    }

    #[test]
    fn behind_camera_is_an_error() {
        let r = project(&Vector3::new(0.0, 0.0, -1.0), &intr(), &CameraPose::identity());
        assert!(matches!(r, Err(Error::BehindCamera(_))));
        let r = project(&Vector3::new(0.0, 0.0, 0.0), &intr(), &CameraPose::identity());
        assert!(matches!(r, Err(Error::BehindCamera(_))));
    }

    #[test]
    fn unproject_principal_point_and_focal_offset() {
        let k = intr();
        let p = unproject(&Vector2::new(64.0, 64.0), 3.5, &k, &CameraPose::identity()).unwrap();
        assert_eq!(p, Vector3::new(0.0, 0.0, 3.5));
        let p = unproject(&Vector2::new(164.0, 64.0), 1.0, &k, &CameraPose::identity()).unwrap();
        assert!((p - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn unproject_rejects_non_positive_depth() {
        let k = intr();
        let r = unproject(&Vector2::new(1.0, 1.0), 0.0, &k, &CameraPose::identity());
        assert!(matches!(r, Err(Error::NonPositiveDepth(_))));
    }

    #[test]
    fn pure_translation_roundtrip() {
        let k = intr();
        let pose = CameraPose::new(UnitQuaternion::identity(), Vector3::new(0.3, -0.2, 0.5));
        let px = Vector2::new(20.0, 90.0);
        let world = unproject(&px, 1.0, &k, &pose).unwrap();
        // identity-pose unprojection shifted by -t
        let ident = unproject(&px, 1.0, &k, &CameraPose::identity()).unwrap();
        assert!((world - (ident - pose.translation)).norm() < 1e-12);
        let (back, d) = project(&world, &k, &pose).unwrap();
        assert!((back - px).norm() < 1e-9 && (d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, -0.1, 1.0, 4, 4).is_err());
    }

    #[test]
    fn view_requires_ordered_planes() {
        let k = intr();
        let img = ImageGrid::zeros(128, 128, 3);
        assert!(View::new(img.clone(), k, CameraPose::identity(), 2.0, 1.0).is_err());
        assert!(View::new(img, k, CameraPose::identity(), 0.0, 1.0).is_err());
    }

    #[test]
    fn from_center_places_camera() {
        let r = UnitQuaternion::from_euler_angles(0.1, -0.4, 0.25);
        let c = Vector3::new(1.0, 2.0, -3.0);
        let pose = CameraPose::from_center(r, c);
        assert!((pose.center() - c).norm() < 1e-12);
        assert!(pose.to_camera(&c).norm() < 1e-12);
    }

    prop_compose! {
        fn arb_camera()(fx in 40.0..400.0f64, fy in 40.0..400.0f64,
                        w in 16usize..300, h in 16usize..300,
                        cxf in 0.0..1.0f64, cyf in 0.0..1.0f64,
                        roll in -3.0..3.0f64, pitch in -1.5..1.5f64, yaw in -3.0..3.0f64,
                        tx in -5.0..5.0f64, ty in -5.0..5.0f64, tz in -5.0..5.0f64)
            -> (CameraIntrinsics, CameraPose) {
            let k = CameraIntrinsics::new(fx, fy, cxf * (w as f64 - 1.0), cyf * (h as f64 - 1.0), w, h).unwrap();
            let pose = CameraPose::new(UnitQuaternion::from_euler_angles(roll, pitch, yaw), Vector3::new(tx, ty, tz));
            (k, pose)
        }
    }

    proptest! {
        #[test]
        fn project_unproject_roundtrip((k, pose) in arb_camera(), seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let px = Vector2::new(rng.random_range(0.0..k.width as f64), rng.random_range(0.0..k.height as f64));
                let d = rng.random_range(0.05..50.0);
                let w = unproject(&px, d, &k, &pose).unwrap();
                let (back, depth) = project(&w, &k, &pose).unwrap();
                prop_assert!((back - px).norm() < 1e-9);
                prop_assert!((depth - d).abs() < 1e-9);
            }
        }
    }
}
