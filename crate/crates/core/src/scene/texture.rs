use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Procedural solid texture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Two-octave lattice value noise.
    ValueNoise,
    /// Oblique sinusoidal stripes.
    Stripes,
    /// Value noise modulated by stripes.
    NoiseStripes,
}

/// Axis-aligned slab where the texture is replaced by a constant color.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlatBand {
    pub axis: usize,
    pub min: f64,
    pub max: f64,
    pub color: [f64; 3],
}

impl FlatBand {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        let v = p[self.axis];
        v >= self.min && v <= self.max
    }
}

/// Solid texture evaluated at world positions, so every surface gets a
/// seamless pattern without per-vertex texture coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Texture {
    pub kind: TextureKind,
    /// Spatial frequency in cycles per scene unit.
    pub frequency: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub flat_bands: Vec<FlatBand>,
}

impl Texture {
    pub fn new(kind: TextureKind, frequency: f64, seed: u64) -> Self {
        Self {
            kind,
            frequency,
            seed,
            flat_bands: Vec::new(),
        }
    }

    pub fn with_flat_band(mut self, band: FlatBand) -> Self {
        self.flat_bands.push(band);
        self
    }

    pub fn color(&self, p: &Vector3<f64>) -> [f64; 3] {
        if let Some(band) = self.flat_bands.iter().find(|b| b.contains(p)) {
            return band.color;
        }
        let q = p * self.frequency;
        let mut rgb = [0.0; 3];
        for (ch, out) in rgb.iter_mut().enumerate() {
            let salt = self
                .seed
                .wrapping_mul(0x9E37_79B9)
                .wrapping_add(ch as u64 * 0x51ED_27);
            let v = match self.kind {
                TextureKind::ValueNoise => noise2(&q, salt),
                TextureKind::Stripes => stripes(&q, ch),
                TextureKind::NoiseStripes => 0.65 * noise2(&q, salt) + 0.35 * stripes(&q, ch),
            };
            *out = (0.1 + 0.8 * v).clamp(0.0, 1.0);
        }
        rgb
    }
}

fn stripes(q: &Vector3<f64>, ch: usize) -> f64 {
    let phase = ch as f64 * 0.9;
    let s = (std::f64::consts::TAU * (q.x + 0.61 * q.y + 0.37 * q.z) + phase).sin();
    0.5 + 0.5 * s
}

fn noise2(q: &Vector3<f64>, salt: u64) -> f64 {
    (2.0 * value_noise(q, salt) + value_noise(&(q * 2.03), salt ^ 0xABCD)) / 3.0
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(ix: i64, iy: i64, iz: i64, salt: u64) -> f64 {
    let h = splitmix(
        (ix as u64).wrapping_mul(0x8DA6_B343)
            ^ (iy as u64).wrapping_mul(0xD816_3841)
            ^ (iz as u64).wrapping_mul(0xCB1A_B31F)
            ^ salt,
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Trilinearly interpolated lattice noise in [0, 1].
fn value_noise(q: &Vector3<f64>, salt: u64) -> f64 {
    let (fx, fy, fz) = (q.x.floor(), q.y.floor(), q.z.floor());
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let (tx, ty, tz) = (smooth(q.x - fx), smooth(q.y - fy), smooth(q.z - fz));
    let mut acc = 0.0;
    for dz in 0..2 {
        for dy in 0..2 {
            for dx in 0..2 {
                let w = if dx == 1 { tx } else { 1.0 - tx }
                    * if dy == 1 { ty } else { 1.0 - ty }
                    * if dz == 1 { tz } else { 1.0 - tz };
                acc += w * lattice(ix + dx, iy + dy, iz + dz, salt);
            }
        }
    }
    acc
}
