//! Surfel orientation helpers.
//!
//! A surfel's normal is the third column of its rotation matrix, i.e. the
//! local +z axis carried into the world frame.

use nalgebra::{Matrix3, Quaternion, Unit, UnitQuaternion, Vector3, Vector4};

use crate::error::{Error, Result};

/// Tolerance on `|n| - 1` accepted by [`normal_to_quat`].
pub const UNIT_NORMAL_TOL: f64 = 1e-6;

/// Unit normal carried by an orientation: `R(q) * (0, 0, 1)`.
pub fn quat_to_normal(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Vector3::new(
        2.0 * (x * z + w * y),
        2.0 * (y * z - w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Shortest-arc rotation taking `+z` onto `n`.
///
/// At the antipode `n = -z` every half-turn about an axis in the xy-plane is
/// minimal; the half-turn about +x is returned.
pub fn normal_to_quat(n: &Vector3<f64>) -> Result<UnitQuaternion<f64>> {
    let norm = n.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORMAL_TOL {
        return Err(Error::NonUnitNormal(norm));
    }
    let n = n / norm;
    // q ~ (1 + z.n, z x n), normalized
    let w = 1.0 + n.z;
    if w <= 1e-12 {
        return Ok(antipodal_tie_break());
    }
    let q = Quaternion::new(w, -n.y, n.x, 0.0);
    Ok(UnitQuaternion::from_quaternion(q))
}

/// True when `n` is (numerically) the antipode of +z, where the shortest arc
/// is not unique.
pub fn is_antipodal(n: &Vector3<f64>) -> bool {
    1.0 + n.z / n.norm() <= 1e-12
}

fn antipodal_tie_break() -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI)
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn rotation_from_wxyz(q: &Vector4<f64>) -> Matrix3<f64> {
    let q = q / q.norm();
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on `R(q / |q|)` back to the raw quaternion components.
pub fn rotation_vjp(q: &Vector4<f64>, grad_r: &Matrix3<f64>) -> Vector4<f64> {
    let len = q.norm();
    let u = q / len;
    let (w, x, y, z) = (u[0], u[1], u[2], u[3]);
    let g = grad_r;
    let dw = 2.0
        * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)]);
    let dx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let dy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let dz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let d = Vector4::new(dw, dx, dy, dz);
    // d/dq of q/|q| is (I - u u^T) / |q|
    (d - u * u.dot(&d)) / len
}

pub fn quat_to_wxyz(q: &UnitQuaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

/// Normalizes a raw `(w, x, y, z)` vector into a unit quaternion.
pub fn wxyz_to_quat(q: &Vector4<f64>) -> UnitQuaternion<f64> {
    Unit::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3]))
}
