use crate::geometry::ImageGrid;

/// Number of descriptor channels.
pub const FEATURE_CHANNELS: usize = 8;

/// Resolution ratio between input images and feature maps.
pub const FEATURE_STRIDE: usize = 4;

/// Per-pixel descriptor at 1/4 input resolution with standardized channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub grid: ImageGrid,
}

impl FeatureMap {
    pub fn channels(&self) -> usize {
        self.grid.channels()
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn width(&self) -> usize {
        self.grid.width()
    }
}

/// Unstandardized descriptor channels of the quarter-resolution luma:
/// luma, d/dx, d/dy, 3x3 mean, 3x3 std, d2/dx2, d2/dy2, d2/dxdy.
///
/// First derivatives use central differences, falling back to one-sided
/// differences at the border, so a linear ramp has a constant gradient.
pub fn raw_descriptors(image: &ImageGrid) -> crate::Result<ImageGrid> {
    if image.channels() != 3 {
        return Err(crate::Error::invalid(
            "image channels",
            format!("features need 3 channels, got {}", image.channels()),
        ));
    }
    let luma = image.luma().downsample(FEATURE_STRIDE)?;
    let (h, w) = (luma.height(), luma.width());
    let l = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        luma.get(r, c, 0)
    };
    Ok(ImageGrid::from_fn(h, w, FEATURE_CHANNELS, |r, c, ch| {
        let (ri, ci) = (r as isize, c as isize);
        match ch {
            0 => l(ri, ci),
            1 => {
                let (a, b) = ((ci - 1).max(0), (ci + 1).min(w as isize - 1));
                if b > a {
                    (l(ri, b) - l(ri, a)) / (b - a) as f64
                } else {
                    0.0
                }
            }
            2 => {
                let (a, b) = ((ri - 1).max(0), (ri + 1).min(h as isize - 1));
                if b > a {
                    (l(b, ci) - l(a, ci)) / (b - a) as f64
                } else {
                    0.0
                }
            }
            3 | 4 => {
                let mut vals = [0.0; 9];
                for (i, v) in vals.iter_mut().enumerate() {
                    *v = l(ri + i as isize / 3 - 1, ci + i as isize % 3 - 1);
                }
                let mean = vals.iter().sum::<f64>() / 9.0;
                if ch == 3 {
                    mean
                } else {
                    (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt()
                }
            }
            5 => l(ri, ci + 1) - 2.0 * l(ri, ci) + l(ri, ci - 1),
            6 => l(ri + 1, ci) - 2.0 * l(ri, ci) + l(ri - 1, ci),
            _ => 0.25 * (l(ri + 1, ci + 1) - l(ri + 1, ci - 1) - l(ri - 1, ci + 1) + l(ri - 1, ci - 1)),
        }
    }))
}

/// Deterministic hand-crafted descriptor. Every channel is first shifted to
/// zero mean and scaled to unit variance over the map (channels with
/// numerically zero variance become zero); each pixel's descriptor is then
/// rescaled to norm `sqrt(C)`, so a matching pair scores the same as any
/// other matching pair regardless of local contrast.
pub fn extract_features(image: &ImageGrid) -> crate::Result<FeatureMap> {
    let mut grid = standardized_descriptors(image)?;
    let c = grid.channels();
    let target = (c as f64).sqrt();
    for px in grid.data_mut().chunks_mut(c) {
        let norm = px.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-9 {
            for v in px.iter_mut() {
                *v *= target / norm;
            }
        } else {
            px.fill(0.0);
        }
    }
    Ok(FeatureMap { grid })
}

/// [`raw_descriptors`] with each channel standardized over the map.
pub fn standardized_descriptors(image: &ImageGrid) -> crate::Result<ImageGrid> {
    let mut grid = raw_descriptors(image)?;
    let n = grid.pixel_count() as f64;
    let c = grid.channels();
    for ch in 0..c {
        let mean = grid.data().iter().skip(ch).step_by(c).sum::<f64>() / n;
        let var = grid
            .data()
            .iter()
            .skip(ch)
            .step_by(c)
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n;
        let std = var.sqrt();
        let scale = if std > 1e-9 { 1.0 / std } else { 0.0 };
        for v in grid.data_mut().iter_mut().skip(ch).step_by(c) {
            *v = (*v - mean) * scale;
        }
    }
    Ok(grid)
}
