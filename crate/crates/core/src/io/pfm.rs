use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

/// PFM bytes: `PF` (3 channels) or `Pf` (1 channel), then `width height`,
/// then scale `-1` (little-endian), each on its own line, followed by f32
/// samples row by row from the bottom row up, channels interleaved.
pub fn encode_pfm(grid: &ImageGrid) -> Result<Vec<u8>> {
    let tag = match grid.channels() {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::invalid("pfm channels", format!("need 1 or 3, got {c}"))),
    };
    let (h, w, c) = (grid.height(), grid.width(), grid.channels());
    let mut out = format!("{tag}\n{w} {h}\n-1\n").into_bytes();
    out.reserve(4 * grid.data().len());
    for r in (0..h).rev() {
        for v in &grid.data()[r * w * c..(r + 1) * w * c] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses PFM bytes of either endianness; `path` is only used in messages.
pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    let bad = |reason: &str| Error::format(path, reason.to_string());
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        _ => return Err(bad("not a PFM file")),
    };
    let w: usize = token()?.parse().map_err(|_| bad("bad width"))?;
    let h: usize = token()?.parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    // exactly one whitespace byte separates the header from the samples
    pos += 1;
    let n = w * h * channels;
    if bytes.len() < pos + 4 * n {
        return Err(bad("truncated sample data"));
    }
    let mut data = vec![0.0; n];
    for r in 0..h {
        let src = pos + 4 * (h - 1 - r) * w * channels;
        for i in 0..w * channels {
            let b: [u8; 4] = bytes[src + 4 * i..src + 4 * i + 4].try_into().expect("4 bytes");
            let v = if scale < 0.0 {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            data[r * w * channels + i] = v as f64;
        }
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(bad("non-finite sample"));
    }
    ImageGrid::from_vec(h, w, channels, data)
}

pub fn write_pfm(path: impl AsRef<Path>, grid: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pfm(grid)?).map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes, path)
}
