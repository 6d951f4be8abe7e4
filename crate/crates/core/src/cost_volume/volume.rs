use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::candidates::DepthCandidates;
use super::features::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::{unproject, CameraIntrinsics, ImageGrid, PlaneHomography, Vector2, View};
use crate::losses::PointCloud;

/// Logit of depth hypotheses whose warped sample leaves the other image: the
/// correlation with a zero-filled feature.
pub const INVALID_LOGIT: f64 = 0.0;

/// Matching logits, `height x width x depth` with depth fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    height: usize,
    width: usize,
    logits: Vec<f64>,
    candidates: DepthCandidates,
}

impl CostVolume {
    pub fn new(height: usize, width: usize, logits: Vec<f64>, candidates: DepthCandidates) -> Result<Self> {
        if logits.len() != height * width * candidates.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} logits for a {height}x{width}x{} volume",
                logits.len(),
                candidates.len()
            )));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("cost volume", "non-finite logit"));
        }
        Ok(Self {
            height,
            width,
            logits,
            candidates,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth_count(&self) -> usize {
        self.candidates.len()
    }

    pub fn candidates(&self) -> &DepthCandidates {
        &self.candidates
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// The `D` logits of pixel `(row, col)`.
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let d = self.depth_count();
        let start = (row * self.width + col) * d;
        &self.logits[start..start + d]
    }

    fn map_pixels(&self, f: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> ImageGrid {
        let d = self.depth_count();
        let cands = self.candidates.values();
        let data: Vec<f64> = self.logits.par_chunks(d).map(|l| f(l, cands)).collect();
        ImageGrid::from_vec(self.height, self.width, 1, data).expect("volume map shape")
    }
}

/// Fixed stand-in for the learned cost-volume aggregation: a 3x3 box filter
/// over each depth slice followed by a constant gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregation {
    pub gain: f64,
    pub box_filter: bool,
}

impl Default for Aggregation {
    fn default() -> Self {
        Self {
            gain: DEFAULT_GAIN,
            box_filter: true,
        }
    }
}

impl Aggregation {
    /// Raw correlation passed through unchanged.
    pub fn identity() -> Self {
        Self {
            gain: 1.0,
            box_filter: false,
        }
    }
}

/// Default matching gain of [`Aggregation`].
pub const DEFAULT_GAIN: f64 = 8.0;

/// Plane-sweep correlation: for every pixel of `f_ref` and every candidate
/// `d_k`, the channel dot product with `f_src` warped through the plane
/// `z = d_k` of the reference camera, divided by `sqrt(C)`. Hypotheses that
/// sample outside the source map get [`INVALID_LOGIT`].
#[allow(clippy::too_many_arguments)]
pub fn raw_correlation(
    f_ref: &FeatureMap,
    f_src: &FeatureMap,
    k_ref: &CameraIntrinsics,
    view_ref: &View,
    k_src: &CameraIntrinsics,
    view_src: &View,
    candidates: &DepthCandidates,
) -> Result<CostVolume> {
    if f_ref.channels() != f_src.channels() {
        return Err(Error::ShapeMismatch(format!(
            "feature channels differ: {} vs {}",
            f_ref.channels(),
            f_src.channels()
        )));
    }
    if (f_ref.height(), f_ref.width()) != (k_ref.height, k_ref.width)
        || (f_src.height(), f_src.width()) != (k_src.height, k_src.width)
    {
        return Err(Error::ShapeMismatch(
            "feature maps do not match their intrinsics".into(),
        ));
    }
    let c = f_ref.channels();
    let norm = 1.0 / (c as f64).sqrt();
    let homs: Vec<PlaneHomography> = candidates
        .values()
        .iter()
        .map(|&d| PlaneHomography::new(k_src, &view_src.pose, k_ref, &view_ref.pose, d))
        .collect();
    let (h, w, dn) = (f_ref.height(), f_ref.width(), candidates.len());
    let rows: Vec<Vec<f64>> = (0..h)
        .into_par_iter()
        .map(|r| {
            let mut out = vec![0.0; w * dn];
            let mut sample = vec![0.0; c];
            for col in 0..w {
                let fi = f_ref.grid.pixel(r, col);
                for (k, hom) in homs.iter().enumerate() {
                    let ok = match hom.map(col as f64, r as f64) {
                        Some(p) => f_src.grid.sample_bilinear(p.x, p.y, &mut sample),
                        None => false,
                    };
                    out[col * dn + k] = if ok {
                        fi.iter().zip(&sample).map(|(a, b)| a * b).sum::<f64>() * norm
                    } else {
                        INVALID_LOGIT
                    };
                }
            }
            out
        })
        .collect();
    CostVolume::new(h, w, rows.concat(), candidates.clone())
}

/// Applies the fixed aggregation filter slice by slice. The box filter
/// averages over the in-bounds part of each 3x3 neighborhood.
pub fn aggregate(vol: &CostVolume, agg: &Aggregation) -> CostVolume {
    let (h, w, dn) = (vol.height, vol.width, vol.depth_count());
    let logits: Vec<f64> = if agg.box_filter {
        let rows: Vec<Vec<f64>> = (0..h)
            .into_par_iter()
            .map(|r| {
                let mut out = vec![0.0; w * dn];
                for c in 0..w {
                    let acc = &mut out[c * dn..(c + 1) * dn];
                    let mut count = 0.0;
                    for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                        for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                            count += 1.0;
                            for (a, v) in acc.iter_mut().zip(vol.pixel(rr, cc)) {
                                *a += v;
                            }
                        }
                    }
                    for a in acc.iter_mut() {
                        *a *= agg.gain / count;
                    }
                }
                out
            })
            .collect();
        rows.concat()
    } else {
        vol.logits.iter().map(|v| v * agg.gain).collect()
    };
    CostVolume {
        height: h,
        width: w,
        logits,
        candidates: vol.candidates.clone(),
    }
}

/// Cost volume of `view_ref` against `view_src` from their quarter-resolution
/// feature maps.
pub fn build_cost_volume(
    f_ref: &FeatureMap,
    f_src: &FeatureMap,
    view_ref: &View,
    view_src: &View,
    candidates: &DepthCandidates,
    agg: &Aggregation,
) -> Result<CostVolume> {
    let k_ref = feature_intrinsics(f_ref, view_ref)?;
    let k_src = feature_intrinsics(f_src, view_src)?;
    let raw = raw_correlation(f_ref, f_src, &k_ref, view_ref, &k_src, view_src, candidates)?;
    Ok(aggregate(&raw, agg))
}

fn feature_intrinsics(f: &FeatureMap, view: &View) -> Result<CameraIntrinsics> {
    scaled_intrinsics(&view.intrinsics, f.height(), f.width())
}

/// Intrinsics for a grid that is an integer downsampling of the view image.
pub(crate) fn scaled_intrinsics(
    k: &CameraIntrinsics,
    height: usize,
    width: usize,
) -> Result<CameraIntrinsics> {
    if height == 0 || width == 0 || k.height % height != 0 || k.width % width != 0 {
        return Err(Error::ShapeMismatch(format!(
            "grid {height}x{width} is not an integer downsampling of {}x{}",
            k.height, k.width
        )));
    }
    let factor = k.height / height;
    if k.width / width != factor {
        return Err(Error::ShapeMismatch("anisotropic downsampling".into()));
    }
    Ok(if factor == 1 { *k } else { k.downscaled(factor) })
}

/// Softmax over candidates, written into `out`; in-order summation.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Expected depth under the per-pixel softmax over candidates.
pub fn softmax_depth(vol: &CostVolume) -> ImageGrid {
    vol.map_pixels(|logits, cands| {
        let mut p = vec![0.0; logits.len()];
        softmax_into(logits, &mut p);
        let d: f64 = p.iter().zip(cands).map(|(w, d)| w * d).sum();
        d.clamp(cands[0], cands[cands.len() - 1])
    })
}

/// Matching confidence: the largest softmax probability at each pixel.
pub fn confidence_map(vol: &CostVolume) -> ImageGrid {
    vol.map_pixels(|logits, _| {
        let mut p = vec![0.0; logits.len()];
        softmax_into(logits, &mut p);
        p.iter().cloned().fold(0.0, f64::max)
    })
}

/// One world point per pixel with positive depth, in row-major order. The
/// depth grid may be an integer downsampling of the view's image.
pub fn backproject_depth(depth: &ImageGrid, view: &View) -> Result<PointCloud> {
    Ok(PointCloud::new(backproject_with_pixels(depth, view)?.0))
}

/// Like [`backproject_depth`] but also returns the flat pixel index of each point.
pub fn backproject_with_pixels(
    depth: &ImageGrid,
    view: &View,
) -> Result<(Vec<nalgebra::Vector3<f64>>, Vec<usize>)> {
    let k = scaled_intrinsics(&view.intrinsics, depth.height(), depth.width())?;
    let mut points = Vec::new();
    let mut pixels = Vec::new();
    for r in 0..depth.height() {
        for c in 0..depth.width() {
            let d = depth.get(r, c, 0);
            if d > 0.0 {
                points.push(unproject(&Vector2::new(c as f64, r as f64), d, &k, &view.pose)?);
                pixels.push(r * depth.width() + c);
            }
        }
    }
    Ok((points, pixels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cost_volume::{extract_features, make_candidates, DepthSpacing};
    use crate::geometry::{project, CameraPose, ImageGrid};
    use proptest::prelude::*;

    fn cands(v: &[f64]) -> DepthCandidates {
        DepthCandidates::from_values(v.to_vec()).unwrap()
    }

    fn volume_from(pixels: &[Vec<f64>], c: &DepthCandidates) -> CostVolume {
        CostVolume::new(1, pixels.len(), pixels.concat(), c.clone()).unwrap()
    }

    #[test]
    fn saturated_logit_selects_candidate() {
        let c = make_candidates(1.0, 10.0, 16, DepthSpacing::InverseDepth).unwrap();
        let mut l = vec![0.0; 16];
        l[5] = 50.0;
        let vol = volume_from(&[l], &c);
        assert!((softmax_depth(&vol).get(0, 0, 0) - c.values()[5]).abs() < 1e-6);
        assert!((confidence_map(&vol).get(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_average_candidates() {
        let vol = volume_from(&[vec![0.3; 3]], &cands(&[1.0, 2.0, 3.0]));
        assert!((softmax_depth(&vol).get(0, 0, 0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn two_candidate_closed_form() {
        let vol = volume_from(&[vec![0.0, 3f64.ln()]], &cands(&[1.0, 2.0]));
        assert!((softmax_depth(&vol).get(0, 0, 0) - 1.75).abs() < 1e-12);
        assert!((confidence_map(&vol).get(0, 0, 0) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn uniform_confidence_is_exactly_one_over_d() {
        let c = make_candidates(0.5, 15.0, 128, DepthSpacing::InverseDepth).unwrap();
        let vol = volume_from(&[vec![0.0; 128], vec![-10.0; 128]], &c);
        let conf = confidence_map(&vol);
        assert_eq!(conf.get(0, 0, 0), 1.0 / 128.0);
        assert_eq!(conf.get(0, 1, 0), 1.0 / 128.0);
    }

    #[test]
    fn identical_features_identity_pose_is_depth_independent() {
        let img = ImageGrid::from_fn(32, 32, 3, |r, c, ch| {
            ((r * 13 + c * 7 + ch * 3) % 17) as f64 / 17.0
        });
        let k = CameraIntrinsics::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap();
        let view = View::new(img.clone(), k, CameraPose::identity(), 0.5, 10.0).unwrap();
        let f = extract_features(&img).unwrap();
        let c = make_candidates(0.5, 10.0, 12, DepthSpacing::InverseDepth).unwrap();
        let kf = k.downscaled(4);
        let raw = raw_correlation(&f, &f, &kf, &view, &kf, &view, &c).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                let fv = f.grid.pixel(r, col);
                let expect = fv.iter().map(|v| v * v).sum::<f64>() / 8f64.sqrt();
                assert!(raw.pixel(r, col).iter().all(|&l| (l - expect).abs() < 1e-12));
            }
        }
        let vol = build_cost_volume(&f, &f, &view, &view, &c, &Aggregation::default()).unwrap();
        for r in 0..8 {
            for col in 0..8 {
                let l = vol.pixel(r, col);
                assert!(l.iter().all(|&x| (x - l[0]).abs() < 1e-9));
            }
        }
    }

    #[test]
    fn zero_features_give_zero_logits() {
        let k = CameraIntrinsics::new(30.0, 30.0, 15.5, 15.5, 32, 32).unwrap();
        let view = View::new(ImageGrid::zeros(32, 32, 3), k, CameraPose::identity(), 0.5, 10.0).unwrap();
        let f = FeatureMap {
            grid: ImageGrid::zeros(8, 8, 8),
        };
        let c = make_candidates(0.5, 10.0, 4, DepthSpacing::Linear).unwrap();
        let kf = k.downscaled(4);
        let raw = raw_correlation(&f, &f, &kf, &view, &kf, &view, &c).unwrap();
        assert!(raw.logits().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backprojection_of_constant_depth() {
        let k = CameraIntrinsics::new(20.0, 20.0, 7.5, 7.5, 16, 16).unwrap();
        let view = View::new(ImageGrid::zeros(16, 16, 3), k, CameraPose::identity(), 0.5, 10.0).unwrap();
        let depth = ImageGrid::filled(16, 16, 1, 2.5);
        let cloud = backproject_depth(&depth, &view).unwrap();
        assert_eq!(cloud.len(), 256);
        assert!(cloud.points.iter().all(|p| (p.z - 2.5).abs() < 1e-12));
        // row-major order; roundtrip to the pixel grid
        for (i, p) in cloud.points.iter().enumerate() {
            let (px, _) = project(p, &k, &view.pose).unwrap();
            assert!((px.x - (i % 16) as f64).abs() < 1e-9 && (px.y - (i / 16) as f64).abs() < 1e-9);
        }
        // quarter-resolution depth uses scaled intrinsics
        let coarse = ImageGrid::filled(4, 4, 1, 2.5);
        assert_eq!(backproject_depth(&coarse, &view).unwrap().len(), 16);
    }

    proptest! {
        #[test]
        fn softmax_outputs_are_bounded_and_shift_invariant(
            logits in proptest::collection::vec(-30.0..30.0f64, 2..64),
            shift in -100.0..100.0f64,
        ) {
            let d = logits.len();
            let c = make_candidates(1.0, 7.0, d, DepthSpacing::InverseDepth).unwrap();
            let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
            let a = volume_from(&[logits], &c);
            let b = volume_from(&[shifted], &c);
            let (da, db) = (softmax_depth(&a).get(0, 0, 0), softmax_depth(&b).get(0, 0, 0));
            let (ca, cb) = (confidence_map(&a).get(0, 0, 0), confidence_map(&b).get(0, 0, 0));
            prop_assert!(da >= c.min() && da <= c.max());
            prop_assert!((da - db).abs() < 1e-9);
            prop_assert!((ca - cb).abs() < 1e-9);
            prop_assert!(ca >= 1.0 / d as f64 - 1e-15 && ca <= 1.0);
        }
    }
}
