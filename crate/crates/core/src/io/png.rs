use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

/// 8-bit RGB PNG of a 3-channel (or gray 1-channel) grid; values are clamped
/// to [0, 1] and rounded.
pub fn encode_png(grid: &ImageGrid) -> Result<Vec<u8>> {
    let c = grid.channels();
    if c != 1 && c != 3 {
        return Err(Error::invalid("png channels", format!("need 1 or 3, got {c}")));
    }
    let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let img = RgbImage::from_fn(grid.width() as u32, grid.height() as u32, |x, y| {
        let p = grid.pixel(y as usize, x as usize);
        if c == 1 {
            image::Rgb([q(p[0]); 3])
        } else {
            image::Rgb([q(p[0]), q(p[1]), q(p[2])])
        }
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::invalid("png encoding", e.to_string()))?;
    Ok(out.into_inner())
}

pub fn write_png(path: impl AsRef<Path>, grid: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_png(grid)?).map_err(|e| Error::io(path, e))
}

/// Reads any PNG as RGB in [0, 1].
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    ImageGrid::from_vec(h, w, 3, data)
}
