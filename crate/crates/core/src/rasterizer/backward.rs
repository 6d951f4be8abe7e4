use std::collections::HashMap;

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};
use rayon::prelude::*;

use super::{
    bin_splats, camera_splats, finish_grad, trace_ray, DepthMode, RawGrad, RayHit, RenderConfig, ACC_EPS,
};
use crate::error::{Error, Result};
use crate::gaussian_field::SplatField;
use crate::geometry::{quat_to_wxyz, ImageGrid, View};

/// Gradient of a scalar loss with respect to every rendered map.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderUpstream {
    pub rgb: ImageGrid,
    pub depth: ImageGrid,
    pub normal: ImageGrid,
    pub acc: ImageGrid,
}

impl RenderUpstream {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            rgb: ImageGrid::zeros(height, width, 3),
            depth: ImageGrid::zeros(height, width, 1),
            normal: ImageGrid::zeros(height, width, 3),
            acc: ImageGrid::zeros(height, width, 1),
        }
    }

    fn check(&self, h: usize, w: usize) -> Result<()> {
        let shapes = [
            (&self.rgb, 3),
            (&self.depth, 1),
            (&self.normal, 3),
            (&self.acc, 1),
        ];
        for (g, ch) in shapes {
            if (g.height(), g.width(), g.channels()) != (h, w, ch) {
                return Err(Error::ShapeMismatch(format!(
                    "upstream gradient is {}x{}x{}, expected {h}x{w}x{ch}",
                    g.height(),
                    g.width(),
                    g.channels()
                )));
            }
        }
        Ok(())
    }
}

/// Loss gradient of one splat. `rotation` is with respect to the raw
/// `(w, x, y, z)` quaternion components (tangent to the unit sphere).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SplatGrad {
    pub mu: Vector3<f64>,
    pub scale: Vector2<f64>,
    pub rotation: Vector4<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
}

impl SplatGrad {
    pub fn add_assign(&mut self, o: &SplatGrad) {
        self.mu += o.mu;
        self.scale += o.scale;
        self.rotation += o.rotation;
        self.opacity += o.opacity;
        self.color += o.color;
    }

    pub fn is_zero(&self) -> bool {
        *self == SplatGrad::default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub splats: Vec<SplatGrad>,
}

/// Gradients of `sum(upstream * render(field, view))` with respect to every
/// splat parameter. Partial sums are formed per tile and combined in tile
/// order, so results do not depend on thread scheduling.
pub fn render_backward(
    field: &SplatField,
    view: &View,
    cfg: &RenderConfig,
    upstream: &RenderUpstream,
) -> Result<RenderGradients> {
    let (h, w) = (view.height(), view.width());
    upstream.check(h, w)?;
    if cfg.depth_mode == DepthMode::Median && upstream.depth.data().iter().any(|&g| g != 0.0) {
        return Err(Error::invalid("depth_mode", "median depth has no gradient"));
    }
    let splats = camera_splats(field, view);
    let bins = bin_splats(&splats, view, cfg);
    let k = &view.intrinsics;
    let cutoff_sq = cfg.cutoff_sigma * cfg.cutoff_sigma;
    let expected = cfg.depth_mode == DepthMode::Expected;

    let partials: Vec<Vec<(u32, RawGrad)>> = (0..bins.bins.len())
        .into_par_iter()
        .map(|tile| {
            let bin = &bins.bins[tile];
            if bin.is_empty() {
                return Vec::new();
            }
            let slot: HashMap<u32, usize> = bin.iter().enumerate().map(|(p, &i)| (i, p)).collect();
            let mut local = vec![RawGrad::default(); bin.len()];
            let (ty, tx) = (tile / bins.tiles_x, tile % bins.tiles_x);
            let mut hits: Vec<RayHit> = Vec::new();
            for r in ty * super::TILE_SIZE..((ty + 1) * super::TILE_SIZE).min(h) {
                for c in tx * super::TILE_SIZE..((tx + 1) * super::TILE_SIZE).min(w) {
                    let g_rgb = upstream.rgb.pixel(r, c);
                    let g_rgb = Vector3::new(g_rgb[0], g_rgb[1], g_rgb[2]);
                    let g_d = upstream.depth.get(r, c, 0);
                    let g_n = upstream.normal.pixel(r, c);
                    let g_n = Vector3::new(g_n[0], g_n[1], g_n[2]);
                    let g_a = upstream.acc.get(r, c, 0);
                    if g_rgb == Vector3::zeros() && g_d == 0.0 && g_n == Vector3::zeros() && g_a == 0.0 {
                        continue;
                    }
                    let ray = k.ray(c as f64, r as f64);
                    hits.clear();
                    let t_final =
                        trace_ray(&splats, &bins, bin, c, r, &ray, cutoff_sq, |hit| hits.push(*hit));
                    if hits.is_empty() {
                        continue;
                    }
                    let acc = 1.0 - t_final;
                    let (g_dn, g_nn, g_an) = if acc > ACC_EPS {
                        let mut d_sum = 0.0;
                        let mut n_sum = Vector3::zeros();
                        for hit in &hits {
                            let wt = hit.weight * hit.transmittance;
                            d_sum += wt * hit.depth;
                            n_sum += splats[hit.index as usize].n * (hit.facing * wt);
                        }
                        let g_dn = if expected { g_d / acc } else { 0.0 };
                        let depth_term = if expected { g_d * d_sum / (acc * acc) } else { 0.0 };
                        (g_dn, g_n / acc, g_a - depth_term - g_n.dot(&n_sum) / (acc * acc))
                    } else {
                        (0.0, Vector3::zeros(), g_a)
                    };
                    let mut after = 0.0;
                    for hit in hits.iter().rev() {
                        let s = &splats[hit.index as usize];
                        let n_face = s.n * hit.facing;
                        let feat = g_rgb.dot(&s.color) + g_dn * hit.depth + g_nn.dot(&n_face) + g_an;
                        let wt = hit.weight * hit.transmittance;
                        let dl_dw = hit.transmittance * feat - after / (1.0 - hit.weight);
                        after += wt * feat;

                        let g = &mut local[slot[&hit.index]];
                        g.color += g_rgb * wt;
                        let mut g_depth = wt * g_dn;
                        let mut g_normal = g_nn * (wt * hit.facing);
                        let mut g_p = Vector3::zeros();
                        if !hit.clipped {
                            g.opacity += dl_dw * hit.gauss;
                            let dl_dg = dl_dw * s.alpha;
                            let gu = -dl_dg * hit.gauss * hit.u;
                            let gv = -dl_dg * hit.gauss * hit.v;
                            g.scale.x -= gu * hit.u / s.su;
                            g.scale.y -= gv * hit.v / s.sv;
                            g_p = s.tu * (gu / s.su) + s.tv * (gv / s.sv);
                            let mut axes = Matrix3::zeros();
                            axes.set_column(0, &(hit.p * (gu / s.su)));
                            axes.set_column(1, &(hit.p * (gv / s.sv)));
                            g.axes += axes;
                        }
                        g_depth += g_p.dot(&ray);
                        g.mu_cam += s.n * (g_depth / hit.n_dot_r) - g_p;
                        g_normal -= hit.p * (g_depth / hit.n_dot_r);
                        let mut col = g.axes.column_mut(2);
                        col += g_normal;
                    }
                }
            }
            bin.iter().zip(local).map(|(&i, g)| (i, g)).collect()
        })
        .collect();

    let mut raw = vec![RawGrad::default(); field.len()];
    for tile in &partials {
        for (i, g) in tile {
            raw[*i as usize].add(g);
        }
    }
    let splats = raw
        .par_iter()
        .zip(&field.splats)
        .map(|(g, s)| finish_grad(g, view, &quat_to_wxyz(&s.rotation)))
        .collect();
    Ok(RenderGradients { splats })
}
