use nalgebra::Vector3;

use super::camera::CameraIntrinsics;
use super::image::ImageGrid;

/// Camera-frame normals from a depth map by central differences of the
/// back-projected points, oriented toward the camera. Pixels without four
/// valid neighbors get a zero normal.
pub fn normals_from_depth(depth: &ImageGrid, k: &CameraIntrinsics) -> ImageGrid {
    let (h, w) = (depth.height(), depth.width());
    let point = |r: usize, c: usize| -> Option<Vector3<f64>> {
        let d = depth.get(r, c, 0);
        (d > 0.0).then(|| k.ray(c as f64, r as f64) * d)
    };
    let mut out = ImageGrid::zeros(h, w, 3);
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            let (Some(p), Some(l), Some(rt), Some(u), Some(dn)) = (
                point(r, c),
                point(r, c - 1),
                point(r, c + 1),
                point(r - 1, c),
                point(r + 1, c),
            ) else {
                continue;
            };
            let mut n = (rt - l).cross(&(dn - u));
            let len = n.norm();
            if len == 0.0 {
                continue;
            }
            n /= len;
            if n.dot(&p) > 0.0 {
                n = -n;
            }
            out.pixel_mut(r, c).copy_from_slice(n.as_slice());
        }
    }
    out
}
