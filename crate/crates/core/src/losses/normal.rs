use nalgebra::Vector3;
use rayon::prelude::*;

use super::angmf::angmf_nll;
use super::sampling::{uncertainty_sample, SamplingConfig};
use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, UNIT_NORMAL_TOL};

/// Normals and concentrations at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalScale {
    /// Unit normals, 3 channels.
    pub normal: ImageGrid,
    /// Concentration, 1 channel, positive.
    pub kappa: ImageGrid,
}

/// Per-pixel normal and concentration at several scales, coarse to fine
/// (1/4, 1/2 and full resolution in the reconstruction pipeline).
#[derive(Debug, Clone, PartialEq)]
pub struct NormalPrediction {
    pub scales: Vec<NormalScale>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalLossValue {
    pub loss: f64,
    pub per_scale: Vec<f64>,
    /// Tangential gradient per scale, zero outside the sampled pixels.
    pub grad_normal: Vec<ImageGrid>,
    pub grad_kappa: Vec<ImageGrid>,
    /// Sampled pixel indices per scale.
    pub samples: Vec<Vec<usize>>,
}

fn scale_seed(seed: u64, scale: usize) -> u64 {
    seed ^ (scale as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn unit_at(grid: &ImageGrid, i: usize) -> Result<Vector3<f64>> {
    let d = &grid.data()[3 * i..3 * i + 3];
    let n = Vector3::new(d[0], d[1], d[2]);
    let norm = n.norm();
    if (norm - 1.0).abs() > UNIT_NORMAL_TOL {
        return Err(Error::NonUnitNormal(norm));
    }
    Ok(n)
}

/// Mean over scales of the AngMF NLL averaged over κ-guided samples.
/// `masks`, when given, restricts sampling per scale (e.g. to covered pixels
/// with a valid pseudo ground truth).
pub fn normal_loss(
    pred: &NormalPrediction,
    pseudo_gt: &[ImageGrid],
    masks: Option<&[Vec<bool>]>,
    cfg: &SamplingConfig,
    seed: u64,
) -> Result<NormalLossValue> {
    cfg.validate()?;
    if pred.scales.is_empty() {
        return Err(Error::invalid("normal prediction", "no scales"));
    }
    if pseudo_gt.len() != pred.scales.len() || masks.is_some_and(|m| m.len() != pred.scales.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted scales, {} pseudo ground-truth maps",
            pred.scales.len(),
            pseudo_gt.len()
        )));
    }
    let n_scales = pred.scales.len() as f64;
    let mut out = NormalLossValue {
        loss: 0.0,
        per_scale: Vec::new(),
        grad_normal: Vec::new(),
        grad_kappa: Vec::new(),
        samples: Vec::new(),
    };
    for (s, (scale, gt)) in pred.scales.iter().zip(pseudo_gt).enumerate() {
        let (h, w) = (scale.normal.height(), scale.normal.width());
        if scale.normal.channels() != 3
            || gt.channels() != 3
            || !scale.normal.same_shape(gt)
            || (scale.kappa.height(), scale.kappa.width(), scale.kappa.channels()) != (h, w, 1)
        {
            return Err(Error::ShapeMismatch(format!(
                "normal scale {s} shapes do not align"
            )));
        }
        let mask = masks.map(|m| m[s].as_slice());
        let available = mask.map_or(h * w, |m| m.iter().filter(|&&b| b).count());
        if available == 0 {
            return Err(Error::EmptyMask);
        }
        let count = cfg.budget(available);
        let picked = uncertainty_sample(&scale.kappa, mask, cfg.beta, count, scale_seed(seed, s))?;
        let terms = picked
            .par_iter()
            .map(|&i| {
                let n = unit_at(&scale.normal, i)?;
                let n_hat = unit_at(gt, i)?;
                angmf_nll(&n, scale.kappa.data()[i], &n_hat)
            })
            .collect::<Result<Vec<_>>>()?;
        let inv = 1.0 / count as f64;
        let mut grad_n = ImageGrid::zeros(h, w, 3);
        let mut grad_k = ImageGrid::zeros(h, w, 1);
        let mut sum = 0.0;
        for (&i, t) in picked.iter().zip(&terms) {
            sum += t.loss;
            let g = t.grad_n * (inv / n_scales);
            grad_n.data_mut()[3 * i..3 * i + 3].copy_from_slice(g.as_slice());
            grad_k.data_mut()[i] = t.grad_kappa * inv / n_scales;
        }
        let mean = sum * inv;
        out.loss += mean / n_scales;
        out.per_scale.push(mean);
        out.grad_normal.push(grad_n);
        out.grad_kappa.push(grad_k);
        out.samples.push(picked);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_prediction(n: [f64; 3], kappa: f64) -> (NormalPrediction, Vec<ImageGrid>) {
        let sizes = [(4, 5), (8, 10), (16, 20)];
        let normal = |h, w| ImageGrid::from_fn(h, w, 3, |_, _, c| n[c]);
        let pred = NormalPrediction {
            scales: sizes
                .iter()
                .map(|&(h, w)| NormalScale {
                    normal: normal(h, w),
                    kappa: ImageGrid::filled(h, w, 1, kappa),
                })
                .collect(),
        };
        (pred, sizes.iter().map(|&(h, w)| normal(h, w)).collect())
    }

    #[test]
    fn constant_field_value() {
        let (pred, gt) = constant_prediction([0.0, 0.0, 1.0], 1.0);
        let v = normal_loss(&pred, &gt, None, &SamplingConfig::default(), 0).unwrap();
        assert!((v.loss - (-0.6508)).abs() < 1e-3);
        assert_eq!(v.samples[2].len(), (0.4f64 * 320.0).round() as usize);
        let (pred2, _) = constant_prediction([0.0, 0.0, 1.0], 2.0);
        assert!(
            normal_loss(&pred2, &gt, None, &SamplingConfig::default(), 0)
                .unwrap()
                .loss
                < v.loss
        );
    }

    #[test]
    fn deterministic_and_invariant_outside_sample() {
        let (mut pred, gt) = constant_prediction([0.6, 0.0, 0.8], 1.0);
        for scale in pred.scales.iter_mut() {
            for (i, k) in scale.kappa.data_mut().iter_mut().enumerate() {
                *k = 0.5 + ((i * 37) % 101) as f64 * 0.01 + i as f64 * 1e-6;
            }
        }
        let gt_z: Vec<ImageGrid> = gt
            .iter()
            .map(|g| ImageGrid::from_fn(g.height(), g.width(), 3, |_, _, c| [0.0, 0.0, 1.0][c]))
            .collect();
        let cfg = SamplingConfig::default();
        let a = normal_loss(&pred, &gt_z, None, &cfg, 9).unwrap();
        assert_eq!(a, normal_loss(&pred, &gt_z, None, &cfg, 9).unwrap());
        // permuting kappa among unsampled pixels above the lowest-kappa cut
        // leaves the sample set and therefore the loss unchanged
        let fine = &mut pred.scales[2].kappa;
        let lowest = (cfg.beta * a.samples[2].len() as f64).floor() as usize;
        let cut = a.samples[2][..lowest]
            .iter()
            .map(|&i| fine.data()[i])
            .fold(0.0, f64::max);
        let sampled: std::collections::HashSet<usize> = a.samples[2].iter().copied().collect();
        let mut outside: Vec<usize> = (0..fine.data().len())
            .filter(|i| !sampled.contains(i) && fine.data()[*i] > cut)
            .collect();
        assert!(outside.len() > 2);
        let vals: Vec<f64> = outside.iter().map(|&i| fine.data()[i]).collect();
        outside.rotate_left(1);
        for (&i, v) in outside.iter().zip(vals) {
            fine.data_mut()[i] = v;
        }
        let b = normal_loss(&pred, &gt_z, None, &cfg, 9).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.loss, b.loss);
    }

    #[test]
    fn rejects_misaligned_or_invalid_input() {
        let (pred, gt) = constant_prediction([0.0, 0.0, 1.0], 1.0);
        assert!(normal_loss(&pred, &gt[..2], None, &SamplingConfig::default(), 0).is_err());
        let (bad, _) = constant_prediction([0.0, 0.0, 2.0], 1.0);
        assert!(matches!(
            normal_loss(&bad, &gt, None, &SamplingConfig::default(), 0),
            Err(Error::NonUnitNormal(_))
        ));
    }
}
