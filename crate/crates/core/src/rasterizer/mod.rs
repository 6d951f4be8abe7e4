//! Differentiable rendering of 2D Gaussian surfels.
//!
//! Each pixel ray is intersected exactly with the plane of every candidate
//! splat; the hit is expressed in the splat's scaled tangent frame `(u, v)`
//! and weighted by `alpha * exp(-(u^2 + v^2) / 2)`. Splats are blended front
//! to back in a single global order (camera depth of the center, index as
//! tie-break). No screen-space approximation or low-pass term is used, so
//! [`render_backward`] is the exact derivative of [`render`].

mod backward;
mod forward;

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use crate::gaussian_field::SplatField;
use crate::geometry::{quat_to_wxyz, rotation_from_wxyz, View};

pub use backward::{render_backward, RenderGradients, RenderUpstream, SplatGrad};
pub use forward::{render, RenderOutput};

/// Side length of the square screen tiles used for culling.
pub const TILE_SIZE: usize = 16;
/// Blending weights are clipped to this value.
pub const MAX_WEIGHT: f64 = 0.999;
/// A ray stops once its transmittance falls below this value.
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Depth and normal are normalized by the accumulated opacity only above this value.
pub const ACC_EPS: f64 = 1e-4;

/// Statistic written to the depth channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DepthMode {
    /// `sum(w T z) / acc`.
    #[default]
    Expected,
    /// Depth of the splat at which accumulated opacity first reaches 0.5
    /// (forward only).
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig {
    pub depth_mode: DepthMode,
    /// Splats contribute only where `u^2 + v^2 <= cutoff^2`.
    pub cutoff_sigma: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            depth_mode: DepthMode::Expected,
            cutoff_sigma: 3.0,
        }
    }
}

/// A splat expressed in the camera frame of the view being rendered.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CameraSplat {
    pub mu: Vector3<f64>,
    pub tu: Vector3<f64>,
    pub tv: Vector3<f64>,
    pub n: Vector3<f64>,
    pub su: f64,
    pub sv: f64,
    pub alpha: f64,
    pub color: Vector3<f64>,
    /// `tu / su`, `tv / sv` and `n . mu`, hoisted out of the per-pixel loop.
    pub tu_scaled: Vector3<f64>,
    pub tv_scaled: Vector3<f64>,
    pub n_dot_mu: f64,
}

/// Survivors of culling in blending order, and per-tile candidate lists.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBins {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Splat indices in front-to-back order.
    pub order: Vec<usize>,
    /// For each tile (row-major), the splat indices overlapping it, in blending order.
    pub bins: Vec<Vec<u32>>,
    /// Per splat, the inclusive pixel rectangle `[x0, y0, x1, y1]` that can
    /// contain its cutoff ellipse (empty for culled splats).
    pub bounds: Vec<[u32; 4]>,
}

impl TileBins {
    pub fn tile_of(&self, row: usize, col: usize) -> &[u32] {
        &self.bins[(row / TILE_SIZE) * self.tiles_x + col / TILE_SIZE]
    }
}

pub(crate) fn camera_splats(field: &SplatField, view: &View) -> Vec<CameraSplat> {
    let rot = view.pose.rotation_matrix();
    field
        .splats
        .par_iter()
        .map(|s| {
            let r = rotation_from_wxyz(&quat_to_wxyz(&s.rotation));
            let axes = rot * r;
            let mu = view.pose.to_camera(&s.mu);
            let (tu, tv, n) = (
                axes.column(0).into_owned(),
                axes.column(1).into_owned(),
                axes.column(2).into_owned(),
            );
            CameraSplat {
                mu,
                tu,
                tv,
                n,
                su: s.scale.x,
                sv: s.scale.y,
                alpha: s.opacity,
                color: s.color,
                tu_scaled: tu / s.scale.x,
                tv_scaled: tv / s.scale.y,
                n_dot_mu: n.dot(&mu),
            }
        })
        .collect()
}

/// Screen-space bounds of the splat's `cutoff`-sigma rectangle, or `None`
/// when it lies behind the camera or misses the image.
fn screen_bounds(s: &CameraSplat, view: &View, cutoff: f64) -> Option<[usize; 4]> {
    let k = &view.intrinsics;
    let (w, h) = (k.width as f64, k.height as f64);
    let du = s.tu * (cutoff * s.su);
    let dv = s.tv * (cutoff * s.sv);
    let corners = [s.mu + du + dv, s.mu + du - dv, s.mu - du + dv, s.mu - du - dv];
    if corners.iter().all(|c| c.z <= 0.0) {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) =
        (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    if corners.iter().any(|c| c.z <= 1e-9) {
        // the rectangle crosses the camera plane: its projection is unbounded
        (x0, y0, x1, y1) = (0.0, 0.0, w - 1.0, h - 1.0);
    } else {
        for c in &corners {
            let p = k.project_camera(c);
            x0 = x0.min(p.x);
            x1 = x1.max(p.x);
            y0 = y0.min(p.y);
            y1 = y1.max(p.y);
        }
    }
    // pixel centers are integers; keep every center inside the bounds
    let (x0, y0, x1, y1) = (x0.ceil().max(0.0), y0.ceil().max(0.0), x1.floor(), y1.floor());
    if x1 < x0 || y1 < y0 || x0 > w - 1.0 || y0 > h - 1.0 {
        return None;
    }
    Some([
        x0 as usize,
        y0 as usize,
        (x1.min(w - 1.0)) as usize,
        (y1.min(h - 1.0)) as usize,
    ])
}

/// Removes splats behind the camera or whose cutoff rectangle misses the
/// image, orders the rest by camera depth of the center (ties by index) and
/// bins them into [`TILE_SIZE`] tiles.
pub fn cull_and_sort(field: &SplatField, view: &View, cfg: &RenderConfig) -> TileBins {
    bin_splats(&camera_splats(field, view), view, cfg)
}

pub(crate) fn bin_splats(splats: &[CameraSplat], view: &View, cfg: &RenderConfig) -> TileBins {
    let tiles_x = view.width().div_ceil(TILE_SIZE);
    let tiles_y = view.height().div_ceil(TILE_SIZE);
    let bounds: Vec<Option<[usize; 4]>> = splats
        .par_iter()
        .map(|s| screen_bounds(s, view, cfg.cutoff_sigma))
        .collect();
    let mut order: Vec<usize> = (0..splats.len()).filter(|&i| bounds[i].is_some()).collect();
    order.sort_by(|&a, &b| splats[a].mu.z.total_cmp(&splats[b].mu.z).then(a.cmp(&b)));
    let mut bins = vec![Vec::new(); tiles_x * tiles_y];
    let rects = bounds
        .iter()
        .map(|b| {
            b.map_or([1, 1, 0, 0], |[x0, y0, x1, y1]| {
                [x0 as u32, y0 as u32, x1 as u32, y1 as u32]
            })
        })
        .collect();
    for &i in &order {
        let [x0, y0, x1, y1] = bounds[i].expect("culled");
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    TileBins {
        tiles_x,
        tiles_y,
        order,
        bins,
        bounds: rects,
    }
}

/// One splat's contribution along a pixel ray.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RayHit {
    pub index: u32,
    /// Blending weight `min(alpha g, MAX_WEIGHT)`.
    pub weight: f64,
    pub transmittance: f64,
    pub gauss: f64,
    pub clipped: bool,
    pub depth: f64,
    pub u: f64,
    pub v: f64,
    /// Hit point relative to the splat center, camera frame.
    pub p: Vector3<f64>,
    /// `n . r`.
    pub n_dot_r: f64,
    /// +1 or -1, flips the normal toward the camera.
    pub facing: f64,
}

/// Walks the candidates of pixel `(col, row)` front to back, calling `visit`
/// for every contributing hit. Returns the final transmittance.
///
/// The perspective image of the planar cutoff rectangle lies inside the
/// bounding box of its projected corners, so skipping splats whose box
/// excludes the pixel changes nothing.
#[inline]
#[allow(clippy::too_many_arguments)]
pub(crate) fn trace_ray(
    splats: &[CameraSplat],
    bins: &TileBins,
    candidates: &[u32],
    col: usize,
    row: usize,
    ray: &Vector3<f64>,
    cutoff_sq: f64,
    mut visit: impl FnMut(&RayHit),
) -> f64 {
    let mut t = 1.0;
    let (x, y) = (col as u32, row as u32);
    for &idx in candidates {
        let [x0, y0, x1, y1] = bins.bounds[idx as usize];
        if x < x0 || x > x1 || y < y0 || y > y1 {
            continue;
        }
        let s = &splats[idx as usize];
        let n_dot_r = s.n.dot(ray);
        if n_dot_r.abs() < 1e-12 {
            continue;
        }
        let depth = s.n_dot_mu / n_dot_r;
        if depth <= 0.0 {
            continue;
        }
        let p = ray * depth - s.mu;
        let u = p.dot(&s.tu_scaled);
        let v = p.dot(&s.tv_scaled);
        let rho = u * u + v * v;
        if rho > cutoff_sq {
            continue;
        }
        let gauss = (-0.5 * rho).exp();
        let raw = s.alpha * gauss;
        let (weight, clipped) = if raw > MAX_WEIGHT {
            (MAX_WEIGHT, true)
        } else {
            (raw, false)
        };
        if weight <= 0.0 {
            continue;
        }
        visit(&RayHit {
            index: idx,
            weight,
            transmittance: t,
            gauss,
            clipped,
            depth,
            u,
            v,
            p,
            n_dot_r,
            facing: if n_dot_r > 0.0 { -1.0 } else { 1.0 },
        });
        t *= 1.0 - weight;
        if t < MIN_TRANSMITTANCE {
            break;
        }
    }
    t
}

/// Accumulated gradient of one splat before the rotation is pulled back to
/// quaternion components.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RawGrad {
    pub mu_cam: Vector3<f64>,
    pub axes: Matrix3<f64>,
    pub scale: Vector2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl RawGrad {
    fn add(&mut self, o: &RawGrad) {
        self.mu_cam += o.mu_cam;
        self.axes += o.axes;
        self.scale += o.scale;
        self.opacity += o.opacity;
        self.color += o.color;
    }
}

pub(crate) fn finish_grad(raw: &RawGrad, view: &View, q: &Vector4<f64>) -> SplatGrad {
    let rot = view.pose.rotation_matrix();
    // camera-frame axes are R_view * R(q): pull back through the view rotation
    let grad_rq = rot.transpose() * raw.axes;
    SplatGrad {
        mu: rot.transpose() * raw.mu_cam,
        scale: raw.scale,
        rotation: crate::geometry::rotation_vjp(q, &grad_rq),
        opacity: raw.opacity,
        color: raw.color,
    }
}

#[cfg(test)]
mod tests;
