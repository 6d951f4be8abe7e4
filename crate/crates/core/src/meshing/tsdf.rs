use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::str::FromStr;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ImageGrid, View};

/// Dataset-style parameter sets for near/far planes and TSDF resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Re10k,
    Scannet,
}

impl Preset {
    pub fn near(self) -> f64 {
        match self {
            Preset::Re10k => 1.0,
            Preset::Scannet => 0.5,
        }
    }

    pub fn far(self) -> f64 {
        match self {
            Preset::Re10k => 100.0,
            Preset::Scannet => 15.0,
        }
    }

    pub fn voxel_size(self) -> f64 {
        match self {
            Preset::Re10k => 0.005,
            Preset::Scannet => 0.01,
        }
    }

    pub fn truncation(self) -> f64 {
        match self {
            Preset::Re10k => 0.1,
            Preset::Scannet => 0.08,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Re10k => "re10k",
            Preset::Scannet => "scannet",
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "re10k" => Ok(Preset::Re10k),
            "scannet" => Ok(Preset::Scannet),
            other => Err(Error::invalid(
                "preset",
                format!("unknown preset {other:?} (re10k, scannet)"),
            )),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsdfConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    /// Poses slerped between each consecutive pair of input views.
    pub interpolated_poses: usize,
    /// Rendered pixels with lower accumulated opacity are not fused.
    pub min_acc: f64,
    /// Depths beyond this fraction of the far plane are not fused.
    pub far_fraction: f64,
    pub max_voxels: usize,
}

impl TsdfConfig {
    pub fn from_preset(preset: Preset) -> Self {
        Self {
            voxel_size: preset.voxel_size(),
            truncation: preset.truncation(),
            interpolated_poses: 6,
            min_acc: 0.5,
            far_fraction: 0.9,
            max_voxels: 1 << 26,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_sizes(self.voxel_size, self.truncation)?;
        if !(self.far_fraction > 0.0 && self.far_fraction <= 1.0) {
            return Err(Error::invalid(
                "far fraction",
                format!("must lie in (0, 1], got {}", self.far_fraction),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_acc) {
            return Err(Error::invalid(
                "min acc",
                format!("must lie in [0, 1], got {}", self.min_acc),
            ));
        }
        Ok(())
    }
}

impl Default for TsdfConfig {
    fn default() -> Self {
        Self::from_preset(Preset::Scannet)
    }
}

fn check_sizes(voxel_size: f64, truncation: f64) -> Result<()> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(
            "voxel size",
            format!("must be positive, got {voxel_size}"),
        ));
    }
    if !(truncation >= voxel_size && truncation.is_finite()) {
        return Err(Error::invalid(
            "truncation",
            format!("{truncation} is below the voxel size {voxel_size}"),
        ));
    }
    Ok(())
}

/// Voxels per block edge.
pub const BLOCK: i32 = 8;
const BLOCK_VOXELS: usize = (BLOCK * BLOCK * BLOCK) as usize;

/// Dense `BLOCK`³ chunk of the volume, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelBlock {
    pub tsdf: Vec<f32>,
    pub weight: Vec<f32>,
}

impl VoxelBlock {
    fn new() -> Self {
        Self {
            tsdf: vec![1.0; BLOCK_VOXELS],
            weight: vec![0.0; BLOCK_VOXELS],
        }
    }

    #[inline]
    pub fn local_index(x: i32, y: i32, z: i32) -> usize {
        ((z * BLOCK + y) * BLOCK + x) as usize
    }
}

/// Sparse truncated signed distance volume. Voxel `(i, j, k)` sits at
/// `voxel_size * (i, j, k)`; voxels are stored in blocks allocated on demand
/// around observed surfaces. Unallocated voxels have zero weight.
#[derive(Debug, Clone, PartialEq)]
pub struct TsdfVolume {
    pub voxel_size: f64,
    pub truncation: f64,
    pub max_blocks: usize,
    /// Keyed by block coordinate, `floor(voxel / BLOCK)`.
    pub blocks: BTreeMap<[i32; 3], VoxelBlock>,
}

#[inline]
fn split(v: [i32; 3]) -> ([i32; 3], usize) {
    let key = v.map(|c| c.div_euclid(BLOCK));
    let l = v.map(|c| c.rem_euclid(BLOCK));
    (key, VoxelBlock::local_index(l[0], l[1], l[2]))
}

impl TsdfVolume {
    pub fn new(voxel_size: f64, truncation: f64, max_voxels: usize) -> Result<Self> {
        check_sizes(voxel_size, truncation)?;
        Ok(Self {
            voxel_size,
            truncation,
            max_blocks: (max_voxels / BLOCK_VOXELS).max(1),
            blocks: BTreeMap::new(),
        })
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn voxel_count(&self) -> usize {
        self.blocks.len() * BLOCK_VOXELS
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    #[inline]
    pub fn position(&self, v: [i32; 3]) -> Vector3<f64> {
        Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64) * self.voxel_size
    }

    /// `(tsdf, weight)` of an allocated voxel.
    #[inline]
    pub fn get(&self, v: [i32; 3]) -> Option<(f32, f32)> {
        let (key, i) = split(v);
        self.blocks.get(&key).map(|b| (b.tsdf[i], b.weight[i]))
    }

    fn block_key(&self, p: &Vector3<f64>) -> Option<[i32; 3]> {
        let len = self.voxel_size * BLOCK as f64;
        let k = [p.x, p.y, p.z].map(|c| (c / len).floor());
        k.iter()
            .all(|c| c.abs() < i32::MAX as f64)
            .then(|| k.map(|c| c as i32))
    }

    fn allocate(&mut self, keys: BTreeSet<[i32; 3]>) -> Result<()> {
        let fresh = keys.iter().filter(|k| !self.blocks.contains_key(*k)).count();
        if self.blocks.len() + fresh > self.max_blocks {
            return Err(Error::VolumeTooLarge((self.blocks.len() + fresh) * BLOCK_VOXELS));
        }
        for k in keys {
            self.blocks.entry(k).or_insert_with(VoxelBlock::new);
        }
        Ok(())
    }

    /// Allocates every block touching the box `[min, max]`.
    pub fn allocate_box(&mut self, min: &Vector3<f64>, max: &Vector3<f64>) -> Result<()> {
        let (Some(lo), Some(hi)) = (self.block_key(min), self.block_key(max)) else {
            return Err(Error::invalid("volume bounds", "out of range"));
        };
        let count: f64 = (0..3).map(|a| (hi[a] - lo[a] + 1).max(0) as f64).product();
        if count + self.blocks.len() as f64 > self.max_blocks as f64 {
            return Err(Error::VolumeTooLarge(
                (count * BLOCK_VOXELS as f64).min(usize::MAX as f64) as usize,
            ));
        }
        let mut keys = BTreeSet::new();
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                for x in lo[0]..=hi[0] {
                    keys.insert([x, y, z]);
                }
            }
        }
        self.allocate(keys)
    }

    /// Sets every allocated voxel from a signed distance function in scene
    /// units, with unit weight.
    pub fn fill_sdf(&mut self, sdf: impl Fn(&Vector3<f64>) -> f64 + Sync) {
        let h = self.voxel_size;
        let trunc = self.truncation;
        self.blocks.par_iter_mut().for_each(|(key, block)| {
            for_each_voxel(key, |v, i| {
                let p = Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64) * h;
                block.tsdf[i] = (sdf(&p) / trunc).clamp(-1.0, 1.0) as f32;
                block.weight[i] = 1.0;
            });
        });
    }

    /// Minimum voxel coordinate and extent of the allocated region.
    pub fn bounds(&self) -> Option<([i32; 3], [usize; 3])> {
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for k in self.blocks.keys() {
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        (!self.blocks.is_empty()).then(|| {
            let dims = [0, 1, 2].map(|a| ((hi[a] - lo[a] + 1) * BLOCK) as usize);
            (lo.map(|c| c * BLOCK), dims)
        })
    }

    /// Raw dump: one ASCII header line
    /// `TSDF-BLOCKS <block edge> <block count> <voxel size> <truncation>`,
    /// then per block in key order its three block coordinates as
    /// little-endian i32, the tsdf values and the weights as little-endian f32.
    pub fn write_raw(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(
            out,
            "TSDF-BLOCKS {} {} {:e} {:e}",
            BLOCK,
            self.blocks.len(),
            self.voxel_size,
            self.truncation
        )?;
        let mut buf = Vec::with_capacity(self.blocks.len() * (12 + 8 * BLOCK_VOXELS));
        for (key, block) in &self.blocks {
            for c in key {
                buf.extend_from_slice(&c.to_le_bytes());
            }
            for v in block.tsdf.iter().chain(&block.weight) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.write_all(&buf)
    }
}

/// Calls `f(global voxel, local index)` for every voxel of a block.
#[inline]
fn for_each_voxel(key: &[i32; 3], mut f: impl FnMut([i32; 3], usize)) {
    for z in 0..BLOCK {
        for y in 0..BLOCK {
            for x in 0..BLOCK {
                let v = [key[0] * BLOCK + x, key[1] * BLOCK + y, key[2] * BLOCK + z];
                f(v, VoxelBlock::local_index(x, y, z));
            }
        }
    }
}

/// Depth at continuous pixel `(x, y)`: bilinear when all four neighbors are
/// valid, otherwise the nearest pixel if it is valid.
fn sample_depth(depth: &ImageGrid, valid: &[bool], x: f64, y: f64) -> Option<f64> {
    let (w, h) = (depth.width(), depth.height());
    let ok = |r: usize, c: usize| valid[r * w + c];
    let x0 = x.floor();
    let y0 = y.floor();
    if x0 >= 0.0 && y0 >= 0.0 && (x0 as usize) + 1 < w && (y0 as usize) + 1 < h {
        let (c0, r0) = (x0 as usize, y0 as usize);
        if ok(r0, c0) && ok(r0, c0 + 1) && ok(r0 + 1, c0) && ok(r0 + 1, c0 + 1) {
            let (fx, fy) = (x - x0, y - y0);
            let d = depth.data();
            let top = d[r0 * w + c0] * (1.0 - fx) + d[r0 * w + c0 + 1] * fx;
            let bottom = d[(r0 + 1) * w + c0] * (1.0 - fx) + d[(r0 + 1) * w + c0 + 1] * fx;
            return Some(top * (1.0 - fy) + bottom * fy);
        }
    }
    let c = x.round();
    let r = y.round();
    if c < 0.0 || r < 0.0 || c as usize >= w || r as usize >= h {
        return None;
    }
    let (c, r) = (c as usize, r as usize);
    ok(r, c).then(|| depth.data()[r * w + c])
}

/// Fuses one depth map (camera-space z) into the volume.
///
/// Blocks are first allocated along every valid pixel's ray within one
/// truncation of its depth. Then each allocated voxel that projects inside the
/// image in front of the camera takes `sdf = depth - z`, normalized by the
/// truncation and capped at 1, into a running average with unit frame weight.
/// Voxels more than one truncation behind the observed surface are left
/// untouched. `valid` masks pixels; non-positive depths are always skipped.
pub fn tsdf_integrate(
    vol: &mut TsdfVolume,
    depth: &ImageGrid,
    valid: Option<&[bool]>,
    view: &View,
) -> Result<()> {
    if depth.height() != view.height() || depth.width() != view.width() || depth.channels() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "depth map is {}x{}x{} but the view is {}x{}",
            depth.height(),
            depth.width(),
            depth.channels(),
            view.height(),
            view.width()
        )));
    }
    let mask: Vec<bool> = match valid {
        Some(m) if m.len() != depth.pixel_count() => {
            return Err(Error::ShapeMismatch("depth validity mask length".into()));
        }
        Some(m) => m
            .iter()
            .zip(depth.data())
            .map(|(&v, &d)| v && d > 0.0 && d.is_finite())
            .collect(),
        None => depth.data().iter().map(|&d| d > 0.0 && d.is_finite()).collect(),
    };
    let k = view.intrinsics;
    let trunc = vol.truncation;
    let block_len = vol.voxel_size * BLOCK as f64;
    let mut keys = BTreeSet::new();
    for r in 0..depth.height() {
        for c in 0..depth.width() {
            if !mask[r * depth.width() + c] {
                continue;
            }
            let d = depth.get(r, c, 0);
            let ray = k.ray(c as f64, r as f64);
            let step = 0.5 * block_len / ray.norm();
            let (z0, z1) = ((d - trunc).max(0.0), d + trunc);
            let n = ((z1 - z0) / step).ceil() as usize;
            for s in 0..=n {
                let z = (z0 + s as f64 * step).min(z1);
                if z <= 0.0 {
                    continue;
                }
                let p = view.pose.to_world(&(ray * z));
                if let Some(key) = vol.block_key(&p) {
                    keys.insert(key);
                }
            }
        }
    }
    vol.allocate(keys)?;

    let h = vol.voxel_size;
    let rot = view.pose.rotation_matrix();
    let t = view.pose.translation;
    vol.blocks.par_iter_mut().for_each(|(key, block)| {
        for_each_voxel(key, |v, i| {
            let p = Vector3::new(v[0] as f64, v[1] as f64, v[2] as f64) * h;
            let pc = rot * p + t;
            if pc.z <= 0.0 {
                return;
            }
            let px = k.project_camera(&pc);
            if !k.contains(&px) {
                return;
            }
            let Some(d) = sample_depth(depth, &mask, px.x, px.y) else {
                return;
            };
            let sdf = d - pc.z;
            if sdf < -trunc {
                return;
            }
            let value = (sdf / trunc).min(1.0);
            let w = block.weight[i] as f64;
            block.tsdf[i] = ((block.tsdf[i] as f64 * w + value) / (w + 1.0)) as f32;
            block.weight[i] = (w + 1.0) as f32;
        });
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraIntrinsics, CameraPose};

    fn plane_view(size: usize) -> View {
        let c = (size as f64 - 1.0) / 2.0;
        let k = CameraIntrinsics::new(size as f64, size as f64, c, c, size, size).unwrap();
        View::camera_only(k, CameraPose::identity(), 0.5, 10.0).unwrap()
    }

    /// Zero crossing along the voxel column through the optical axis.
    fn crossing_z(vol: &TsdfVolume) -> f64 {
        let (lo, dims) = vol.bounds().unwrap();
        for k in lo[2]..lo[2] + dims[2] as i32 - 1 {
            let (Some(a), Some(b)) = (vol.get([0, 0, k]), vol.get([0, 0, k + 1])) else {
                continue;
            };
            let (a, b) = (a.0 as f64, b.0 as f64);
            if a >= 0.0 && b < 0.0 {
                return vol.position([0, 0, k]).z + vol.voxel_size * a / (a - b);
            }
        }
        panic!("no crossing");
    }

    #[test]
    fn fronto_parallel_plane_crossing() {
        let view = plane_view(32);
        let depth = ImageGrid::filled(32, 32, 1, 2.013);
        let mut vol = TsdfVolume::new(0.02, 0.08, 1 << 24).unwrap();
        tsdf_integrate(&mut vol, &depth, None, &view).unwrap();
        assert!((crossing_z(&vol) - 2.013).abs() <= 0.5 * vol.voxel_size);
    }

    #[test]
    fn integrating_twice_is_idempotent_and_weights_grow() {
        let view = plane_view(32);
        let depth = ImageGrid::from_fn(32, 32, 1, |r, c, _| 1.9 + 0.003 * r as f64 + 0.002 * c as f64);
        let mut vol = TsdfVolume::new(0.02, 0.08, 1 << 24).unwrap();
        tsdf_integrate(&mut vol, &depth, None, &view).unwrap();
        let once = vol.clone();
        tsdf_integrate(&mut vol, &depth, None, &view).unwrap();
        assert_eq!(vol.block_count(), once.block_count());
        for (a, b) in vol.blocks.values().zip(once.blocks.values()) {
            assert_eq!(a.tsdf, b.tsdf);
            assert!(a.weight.iter().zip(&b.weight).all(|(x, y)| x >= y));
            assert!(a.tsdf.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn masked_pixels_are_skipped() {
        let view = plane_view(16);
        let depth = ImageGrid::filled(16, 16, 1, 2.0);
        let mut vol = TsdfVolume::new(0.05, 0.1, 1 << 24).unwrap();
        tsdf_integrate(&mut vol, &depth, Some(&[false; 256]), &view).unwrap();
        assert!(vol.is_empty());
        assert!(tsdf_integrate(&mut vol, &depth, Some(&[true; 3]), &view).is_err());
    }

    #[test]
    fn block_limit_is_enforced() {
        let mut vol = TsdfVolume::new(0.01, 0.05, 1 << 20).unwrap();
        let r = vol.allocate_box(&Vector3::zeros(), &Vector3::repeat(10.0));
        assert!(matches!(r, Err(Error::VolumeTooLarge(_))));
        let view = plane_view(64);
        let depth = ImageGrid::filled(64, 64, 1, 2.0);
        let mut small = TsdfVolume::new(0.01, 0.05, 1 << 12).unwrap();
        assert!(matches!(
            tsdf_integrate(&mut small, &depth, None, &view),
            Err(Error::VolumeTooLarge(_))
        ));
    }

    #[test]
    fn negative_coordinates_map_to_their_blocks() {
        assert_eq!(split([-1, 0, 8]), ([-1, 0, 1], VoxelBlock::local_index(7, 0, 0)));
        let mut vol = TsdfVolume::new(0.1, 0.2, 1 << 20).unwrap();
        vol.allocate_box(&Vector3::repeat(-0.5), &Vector3::repeat(0.5))
            .unwrap();
        vol.fill_sdf(|p| p.x);
        assert_eq!(vol.get([-3, 2, 1]), Some((-1.0, 1.0)));
        assert_eq!(vol.get([1, 0, 0]), Some((0.5, 1.0)));
        assert_eq!(vol.get([100, 0, 0]), None);
    }

    #[test]
    fn raw_dump_layout() {
        let mut vol = TsdfVolume::new(0.1, 0.2, 1 << 20).unwrap();
        vol.allocate_box(&Vector3::zeros(), &Vector3::new(0.9, 0.1, 0.1))
            .unwrap();
        let mut buf = Vec::new();
        vol.write_raw(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert!(buf.starts_with(b"TSDF-BLOCKS 8 2 "));
        assert_eq!(buf.len() - header_end, 2 * (12 + 8 * 512));
    }

    #[test]
    fn presets() {
        let c = TsdfConfig::from_preset(Preset::Re10k);
        assert_eq!((c.voxel_size, c.truncation), (0.005, 0.1));
        assert_eq!((Preset::Scannet.near(), Preset::Scannet.far()), (0.5, 15.0));
        assert_eq!("re10k".parse::<Preset>().unwrap(), Preset::Re10k);
        assert!("kitti".parse::<Preset>().is_err());
    }
}
