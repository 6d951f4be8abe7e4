use std::collections::{HashMap, HashSet};

use nalgebra::Vector3;
use rayon::prelude::*;

use super::mesh::TriangleMesh;
use super::tables::TRI_TABLE;
use super::tsdf::{TsdfVolume, VoxelBlock, BLOCK};

/// Corner offsets in table order.
const CORNERS: [[i32; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Each edge as (lower corner, axis); the upper corner is one step along the axis.
const EDGES: [(usize, usize); 12] = [
    (0, 0),
    (1, 1),
    (3, 0),
    (0, 1),
    (4, 0),
    (5, 1),
    (7, 0),
    (4, 1),
    (0, 2),
    (1, 2),
    (2, 2),
    (3, 2),
];

type VertexKey = ([i32; 3], u8);

/// Vertices are shared through a key: (lower voxel, axis) for an edge
/// crossing, (voxel, 3) when the crossing lands exactly on a grid node.
fn edge_vertex(
    vol: &TsdfVolume,
    base: [i32; 3],
    values: &[f32; 8],
    edge: usize,
) -> (VertexKey, Vector3<f64>) {
    let (corner, axis) = EDGES[edge];
    let lo = [0, 1, 2].map(|a| base[a] + CORNERS[corner][a]);
    let mut hi = lo;
    hi[axis] += 1;
    let upper = CORNERS
        .iter()
        .position(|c| [0, 1, 2].map(|a| base[a] + c[a]) == hi)
        .expect("edge inside cell");
    let a = values[corner] as f64;
    let b = values[upper] as f64;
    let t = a / (a - b);
    if t <= 0.0 {
        return ((lo, 3), vol.position(lo));
    }
    if t >= 1.0 {
        return ((hi, 3), vol.position(hi));
    }
    let mut p = vol.position(lo);
    p[axis] = (lo[axis] as f64 + t) * vol.voxel_size;
    ((lo, axis as u8), p)
}

/// Iso-level 0 surface of the volume. A cell contributes only when all eight
/// corners are allocated with positive weight. Crossings are placed by linear
/// interpolation along cell edges; triangles face the positive (free-space)
/// side. Faces that collapse to zero area are dropped. Returns an empty mesh
/// when nothing crosses.
pub fn marching_cubes(vol: &TsdfVolume) -> TriangleMesh {
    let keys: Vec<&[i32; 3]> = vol.blocks.keys().collect();
    // per block: triangles as vertex keys plus first-seen positions
    let parts: Vec<(Vec<[VertexKey; 3]>, Vec<(VertexKey, Vector3<f64>)>)> = keys
        .par_iter()
        .map(|key| {
            let block = &vol.blocks[*key];
            let mut tris = Vec::new();
            let mut verts = Vec::new();
            let mut seen = HashSet::new();
            for z in 0..BLOCK {
                for y in 0..BLOCK {
                    for x in 0..BLOCK {
                        let base = [key[0] * BLOCK + x, key[1] * BLOCK + y, key[2] * BLOCK + z];
                        let mut values = [0f32; 8];
                        let mut config = 0usize;
                        let mut observed = true;
                        for (c, off) in CORNERS.iter().enumerate() {
                            let (lx, ly, lz) = (x + off[0], y + off[1], z + off[2]);
                            let (t, w) = if lx < BLOCK && ly < BLOCK && lz < BLOCK {
                                let i = VoxelBlock::local_index(lx, ly, lz);
                                (block.tsdf[i], block.weight[i])
                            } else {
                                vol.get([base[0] + off[0], base[1] + off[1], base[2] + off[2]])
                                    .unwrap_or((1.0, 0.0))
                            };
                            if w <= 0.0 {
                                observed = false;
                                break;
                            }
                            values[c] = t;
                            if t < 0.0 {
                                config |= 1 << c;
                            }
                        }
                        if !observed || config == 0 || config == 255 {
                            continue;
                        }
                        for tri in TRI_TABLE[config].chunks_exact(3).take_while(|t| t[0] >= 0) {
                            let mut out = [([0; 3], 0u8); 3];
                            for (slot, &e) in out.iter_mut().zip(tri) {
                                let (k, p) = edge_vertex(vol, base, &values, e as usize);
                                if seen.insert(k) {
                                    verts.push((k, p));
                                }
                                *slot = k;
                            }
                            // table winding faces the inside; flip toward free space
                            tris.push([out[0], out[2], out[1]]);
                        }
                    }
                }
            }
            (tris, verts)
        })
        .collect();

    let mut index: HashMap<VertexKey, u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (tris, verts) in parts {
        for (key, p) in verts {
            index.entry(key).or_insert_with(|| {
                vertices.push(p);
                (vertices.len() - 1) as u32
            });
        }
        for t in tris {
            let f = [index[&t[0]], index[&t[1]], index[&t[2]]];
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                continue;
            }
            let [a, b, c] = f.map(|v| vertices[v as usize]);
            if (b - a).cross(&(c - a)).norm_squared() == 0.0 {
                continue;
            }
            faces.push(f);
        }
    }
    let mesh = TriangleMesh {
        vertices,
        faces,
        normals: None,
    };
    // vertices whose only faces were degenerate are dropped here
    mesh.filter_faces(|_| true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(h: f64, lo: f64, hi: f64, sdf: impl Fn(&Vector3<f64>) -> f64 + Sync) -> TsdfVolume {
        let mut vol = TsdfVolume::new(h, 3.0 * h, 1 << 26).unwrap();
        vol.allocate_box(&Vector3::repeat(lo), &Vector3::repeat(hi))
            .unwrap();
        vol.fill_sdf(sdf);
        vol
    }

    fn sphere_volume(r: f64, h: f64) -> TsdfVolume {
        filled(h, -r - 4.0 * h, r + 4.0 * h, |p| p.norm() - r)
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let (r, h) = (0.5, 0.02);
        let mesh = marching_cubes(&sphere_volume(r, h));
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
        let worst = mesh
            .vertices
            .iter()
            .map(|v| (v.norm() - r).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.5 * h, "radial error {worst}");
        // outward orientation: positive enclosed volume
        let vol: f64 = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        assert!((vol - 4.0 / 3.0 * std::f64::consts::PI * r.powi(3)).abs() < 0.02);
    }

    #[test]
    fn sphere_off_origin_is_closed() {
        let c = Vector3::new(-0.31, 0.17, -0.05);
        let mesh = marching_cubes(&filled(0.03, -0.9, 0.6, |p| (p - c).norm() - 0.4));
        assert!(mesh.is_closed());
        assert_eq!(mesh.euler_characteristic(), 2);
    }

    #[test]
    fn all_positive_volume_is_empty() {
        assert!(marching_cubes(&filled(0.1, 0.0, 0.5, |_| 1.0)).is_empty());
        assert!(marching_cubes(&TsdfVolume::new(0.1, 0.2, 1 << 20).unwrap()).is_empty());
    }

    #[test]
    fn unobserved_cells_are_skipped() {
        let mut vol = sphere_volume(0.3, 0.05);
        vol.blocks
            .values_mut()
            .for_each(|b| b.weight.iter_mut().for_each(|w| *w = 0.0));
        assert!(marching_cubes(&vol).is_empty());
    }

    #[test]
    fn linear_field_reproduces_the_plane() {
        let h = 0.1;
        let z0 = 0.237;
        let mesh = marching_cubes(&filled(h, -0.5, 0.6, |p| p.z - z0));
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((v.z - z0).abs() <= 1e-6 * h, "{}", v.z);
        }
        for f in 0..mesh.faces.len() {
            assert!(mesh.face_cross(f).z > 0.0);
        }
    }

    #[test]
    fn grid_node_crossings_do_not_emit_degenerate_faces() {
        let h = 0.1;
        let mesh = marching_cubes(&filled(h, 0.0, 0.5, |p| (p.z / h).round() * h - 2.0 * h));
        assert!(!mesh.is_empty());
        for f in 0..mesh.faces.len() {
            assert!(mesh.face_area(f) > 0.0);
        }
        mesh.validate().unwrap();
    }

    #[test]
    fn deterministic() {
        let vol = sphere_volume(0.4, 0.03);
        assert_eq!(marching_cubes(&vol), marching_cubes(&vol));
    }
}
