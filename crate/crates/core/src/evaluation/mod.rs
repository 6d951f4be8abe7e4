//! Surface, depth and normal accuracy metrics.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, View, UNIT_NORMAL_TOL};
use crate::losses::{nearest_distances, KdTree, PointCloud};
use crate::meshing::{frustum_cull_points, TriangleMesh};

pub const DEFAULT_TAU: f64 = 0.05;
pub const DEFAULT_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    pub cd: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tau: f64,
    pub pred_points: usize,
    pub gt_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub abs_diff: f64,
    pub pixels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalMetrics {
    pub mean_deg: f64,
    pub frac_lt30: f64,
    pub pixels: usize,
}

/// `n` points distributed uniformly by area over the faces.
pub fn sample_mesh(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<PointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cumulative.push(total);
    }
    if mesh.faces.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyMesh);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n)
        .map(|_| {
            let target = rng.random::<f64>() * total;
            let f = cumulative
                .partition_point(|&c| c <= target)
                .min(cumulative.len() - 1);
            let (r1, r2): (f64, f64) = (rng.random(), rng.random());
            let s = r1.sqrt();
            let [a, b, c] = mesh.triangle(f);
            a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Chamfer distance (mean of the two directed mean Euclidean distances) plus
/// precision (pred points closer than `tau` to gt), recall (the reverse) and F1.
pub fn mesh_metrics(pred: &PointCloud, gt: &PointCloud, tau: f64) -> Result<MeshMetrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", format!("must be positive, got {tau}")));
    }
    pred.validate()?;
    gt.validate()?;
    let to_gt = nearest_distances(&pred.points, &KdTree::build(&gt.points));
    let to_pred = nearest_distances(&gt.points, &KdTree::build(&pred.points));
    let mean = |d: &[(usize, f64)]| d.iter().map(|x| x.1).sum::<f64>() / d.len() as f64;
    let within = |d: &[(usize, f64)]| d.iter().filter(|x| x.1 < tau).count() as f64 / d.len() as f64;
    let precision = within(&to_gt);
    let recall = within(&to_pred);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MeshMetrics {
        cd: 0.5 * (mean(&to_gt) + mean(&to_pred)),
        precision,
        recall,
        f1,
        tau,
        pred_points: pred.len(),
        gt_points: gt.len(),
    })
}

/// Scores a predicted mesh: `n` area-uniform samples on the prediction
/// (seed `seed`) and `4n` on the ground truth (seed `seed + 1`), each cloud
/// culled to the union of the view frustums before [`mesh_metrics`].
pub fn evaluate_mesh(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    views: &[View],
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<MeshMetrics> {
    if n == 0 {
        return Err(Error::invalid("samples", "must be positive"));
    }
    let cull = |c: PointCloud| PointCloud::new(frustum_cull_points(&c.points, views));
    let gt_pts = cull(sample_mesh(gt, 4 * n, seed.wrapping_add(1))?);
    if gt_pts.is_empty() {
        return Err(Error::EmptyAfterCull("ground truth"));
    }
    let pred_pts = cull(sample_mesh(pred, n, seed)?);
    if pred_pts.is_empty() {
        return Err(Error::EmptyAfterCull("prediction"));
    }
    mesh_metrics(&pred_pts, &gt_pts, tau)
}

fn check_maps(pred: &ImageGrid, gt: &ImageGrid, mask: &[bool], channels: usize) -> Result<()> {
    if !pred.same_shape(gt) || pred.channels() != channels {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{}x{} vs ground truth {}x{}x{}",
            pred.height(),
            pred.width(),
            pred.channels(),
            gt.height(),
            gt.width(),
            gt.channels()
        )));
    }
    if mask.len() != pred.pixel_count() {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} entries for {} pixels",
            mask.len(),
            pred.pixel_count()
        )));
    }
    if !mask.contains(&true) {
        return Err(Error::EmptyMask);
    }
    Ok(())
}

/// Mean relative and absolute depth error over the mask.
pub fn depth_metrics(pred: &ImageGrid, gt: &ImageGrid, mask: &[bool]) -> Result<DepthMetrics> {
    check_maps(pred, gt, mask, 1)?;
    let (mut rel, mut abs, mut n) = (0.0, 0.0, 0usize);
    for ((&p, &g), _) in pred.data().iter().zip(gt.data()).zip(mask).filter(|(_, &m)| m) {
        if !(g > 0.0) {
            return Err(Error::invalid(
                "ground-truth depth",
                format!("must be positive on the mask, got {g}"),
            ));
        }
        rel += (p - g).abs() / g;
        abs += (p - g).abs();
        n += 1;
    }
    Ok(DepthMetrics {
        abs_rel: rel / n as f64,
        abs_diff: abs / n as f64,
        pixels: n,
    })
}

/// Mean angular error in degrees and the fraction of pixels below 30 degrees.
pub fn normal_metrics(pred: &ImageGrid, gt: &ImageGrid, mask: &[bool]) -> Result<NormalMetrics> {
    check_maps(pred, gt, mask, 3)?;
    let (mut sum, mut below, mut n) = (0.0, 0usize, 0usize);
    for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        let p = Vector3::from_column_slice(&pred.data()[3 * i..3 * i + 3]);
        let g = Vector3::from_column_slice(&gt.data()[3 * i..3 * i + 3]);
        for v in [&p, &g] {
            if (v.norm() - 1.0).abs() > UNIT_NORMAL_TOL {
                return Err(Error::NonUnitNormal(v.norm()));
            }
        }
        let deg = p.dot(&g).clamp(-1.0, 1.0).acos().to_degrees();
        sum += deg;
        if deg < 30.0 {
            below += 1;
        }
        n += 1;
    }
    Ok(NormalMetrics {
        mean_deg: sum / n as f64,
        frac_lt30: below as f64 / n as f64,
        pixels: n,
    })
}

#[cfg(test)]
mod tests;
