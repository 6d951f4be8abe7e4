use crate::error::{Error, Result};

/// Dense row-major image with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} grid",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("image data", "contains non-finite values"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(row, col, channel)` everywhere.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &ImageGrid) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let start = (row * self.width + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Single channel `ch` as its own grid.
    pub fn channel(&self, ch: usize) -> ImageGrid {
        ImageGrid::from_fn(self.height, self.width, 1, |r, c, _| self.get(r, c, ch))
    }

    /// Bilinear sample at continuous pixel coordinates (x = column, y = row),
    /// pixel centers at integers. Returns `false` outside `[0, w-1] x [0, h-1]`
    /// (with a 1e-9 pixel slack for round-off); coordinates are clamped into
    /// the grid before interpolation.
    pub fn sample_bilinear(&self, x: f64, y: f64, out: &mut [f64]) -> bool {
        const SLACK: f64 = 1e-9;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        if !(x >= -SLACK && y >= -SLACK && x <= max_x + SLACK && y <= max_y + SLACK) {
            return false;
        }
        let (x, y) = (x.clamp(0.0, max_x), y.clamp(0.0, max_y));
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let w00 = (1.0 - fx) * (1.0 - fy);
        let w01 = fx * (1.0 - fy);
        let w10 = (1.0 - fx) * fy;
        let w11 = fx * fy;
        let p00 = self.pixel(y0, x0);
        let p01 = self.pixel(y0, x1);
        let p10 = self.pixel(y1, x0);
        let p11 = self.pixel(y1, x1);
        for ch in 0..self.channels {
            out[ch] = w00 * p00[ch] + w01 * p01[ch] + w10 * p10[ch] + w11 * p11[ch];
        }
        true
    }

    /// Area-average pooling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<ImageGrid> {
        if factor == 0 || self.height % factor != 0 || self.width % factor != 0 {
            return Err(Error::NonDivisibleSize {
                height: self.height,
                width: self.width,
                factor,
            });
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let norm = 1.0 / (factor * factor) as f64;
        let mut out = ImageGrid::zeros(h, w, self.channels);
        for r in 0..h {
            for c in 0..w {
                for dy in 0..factor {
                    for dx in 0..factor {
                        let src = self.pixel(r * factor + dy, c * factor + dx);
                        let dst = out.pixel_mut(r, c);
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
                for v in out.pixel_mut(r, c) {
                    *v *= norm;
                }
            }
        }
        Ok(out)
    }

    /// Adjoint of [`ImageGrid::downsample`]: spreads each coarse value evenly
    /// over its `factor x factor` block.
    pub fn downsample_adjoint(&self, factor: usize) -> ImageGrid {
        let norm = 1.0 / (factor * factor) as f64;
        ImageGrid::from_fn(
            self.height * factor,
            self.width * factor,
            self.channels,
            |r, c, ch| self.get(r / factor, c / factor, ch) * norm,
        )
    }

    /// Bilinear upsampling by an integer factor, consistent with the
    /// block-center convention of [`ImageGrid::downsample`]; coordinates past
    /// the outermost coarse centers are clamped.
    pub fn upsample_bilinear(&self, factor: usize) -> ImageGrid {
        let offset = (factor as f64 - 1.0) / 2.0;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        let mut out = ImageGrid::zeros(self.height * factor, self.width * factor, self.channels);
        let mut buf = vec![0.0; self.channels];
        for r in 0..out.height {
            let y = ((r as f64 - offset) / factor as f64).clamp(0.0, max_y);
            for c in 0..out.width {
                let x = ((c as f64 - offset) / factor as f64).clamp(0.0, max_x);
                self.sample_bilinear(x, y, &mut buf);
                out.pixel_mut(r, c).copy_from_slice(&buf);
            }
        }
        out
    }

    /// Like [`ImageGrid::upsample_bilinear`] but ignores coarse samples that
    /// are not strictly positive, renormalizing the remaining weights. Used for
    /// depth maps where 0 marks "no value".
    pub fn upsample_bilinear_positive(&self, factor: usize) -> ImageGrid {
        assert_eq!(self.channels, 1);
        let offset = (factor as f64 - 1.0) / 2.0;
        let max_x = (self.width - 1) as f64;
        let max_y = (self.height - 1) as f64;
        ImageGrid::from_fn(self.height * factor, self.width * factor, 1, |r, c, _| {
            let y = ((r as f64 - offset) / factor as f64).clamp(0.0, max_y);
            let x = ((c as f64 - offset) / factor as f64).clamp(0.0, max_x);
            let x0 = x.floor() as usize;
            let y0 = y.floor() as usize;
            let x1 = (x0 + 1).min(self.width - 1);
            let y1 = (y0 + 1).min(self.height - 1);
            let fx = x - x0 as f64;
            let fy = y - y0 as f64;
            let taps = [
                ((1.0 - fx) * (1.0 - fy), self.get(y0, x0, 0)),
                (fx * (1.0 - fy), self.get(y0, x1, 0)),
                ((1.0 - fx) * fy, self.get(y1, x0, 0)),
                (fx * fy, self.get(y1, x1, 0)),
            ];
            let (mut acc, mut wsum) = (0.0, 0.0);
            for (w, v) in taps {
                if v > 0.0 && w > 0.0 {
                    acc += w * v;
                    wsum += w;
                }
            }
            if wsum > 0.0 {
                acc / wsum
            } else {
                0.0
            }
        })
    }

    /// Rec. 601 luma of a 3-channel image.
    pub fn luma(&self) -> ImageGrid {
        assert_eq!(self.channels, 3, "luma needs an RGB image");
        ImageGrid::from_fn(self.height, self.width, 1, |r, c, _| {
            let p = self.pixel(r, c);
            0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
        })
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ImageGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_constant() {
        let img = ImageGrid::filled(8, 8, 3, 0.5);
        let d = img.downsample(4).unwrap();
        assert_eq!((d.height(), d.width()), (2, 2));
        assert!(d.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn downsample_two_by_two_mean() {
        let img = ImageGrid::from_vec(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let d = img.downsample(2).unwrap();
        assert_eq!(d.data(), &[0.5]);
    }

    #[test]
    fn downsample_checkerboard() {
        let img = ImageGrid::from_fn(6, 6, 1, |r, c, _| ((r + c) % 2) as f64);
        let d = img.downsample(2).unwrap();
        assert!(d.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn downsample_rejects_non_divisible() {
        let img = ImageGrid::zeros(6, 8, 1);
        assert!(matches!(
            img.downsample(4),
            Err(Error::NonDivisibleSize { factor: 4, .. })
        ));
    }

    #[test]
    fn downsample_adjoint_identity() {
        let a = ImageGrid::from_fn(8, 4, 2, |r, c, ch| (r * 7 + c * 3 + ch) as f64 * 0.1);
        let b = ImageGrid::from_fn(4, 2, 2, |r, c, ch| ((r + 2 * c + ch) as f64).sin());
        let lhs: f64 = a
            .downsample(2)
            .unwrap()
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = a
            .data()
            .iter()
            .zip(b.downsample_adjoint(2).data())
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn upsample_preserves_linear_ramp_interior() {
        let coarse = ImageGrid::from_fn(4, 4, 1, |_, c, _| c as f64);
        let fine = coarse.upsample_bilinear(4);
        // fine column c sits at coarse x = (c - 1.5) / 4
        for c in 2..14 {
            let expect = (c as f64 - 1.5) / 4.0;
            assert!((fine.get(5, c, 0) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn bilinear_out_of_bounds() {
        let img = ImageGrid::filled(4, 4, 1, 1.0);
        let mut out = [0.0];
        assert!(!img.sample_bilinear(-0.1, 1.0, &mut out));
        assert!(!img.sample_bilinear(3.01, 1.0, &mut out));
        assert!(img.sample_bilinear(3.0, 3.0, &mut out));
        assert_eq!(out[0], 1.0);
    }
}
