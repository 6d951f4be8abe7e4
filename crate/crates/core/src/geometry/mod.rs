//! Cameras, poses, image grids and plane-induced warps.
//!
//! Conventions: world-to-camera poses (`x_cam = R x_world + t`), right-handed
//! camera frame with +z forward, +x right, +y down; pixel centers at integer
//! coordinates with (0,0) the top-left pixel.

mod camera;
mod image;
mod normals;
mod quat;
mod warp;

pub use camera::{project, unproject, CameraIntrinsics, CameraPose, View};
pub use image::ImageGrid;
pub use normals::normals_from_depth;
pub use quat::{
    is_antipodal, normal_to_quat, quat_to_normal, quat_to_wxyz, rotation_from_wxyz, rotation_vjp,
    wxyz_to_quat, UNIT_NORMAL_TOL,
};
pub use warp::{homography_warp, warp_grid, PlaneHomography, WarpedGrid};

pub use nalgebra::{UnitQuaternion, Vector2, Vector3};
