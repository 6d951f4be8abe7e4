use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::gaussian_field::{Provenance, Splat2D, SplatField};
use crate::meshing::TriangleMesh;

/// One element block of an ASCII PLY file. Scalar properties are stored as
/// f64 per row; at most one list property per element is supported.
#[derive(Debug, Clone, Default, PartialEq)]
struct Element {
    name: String,
    count: usize,
    scalars: Vec<String>,
    list: Option<String>,
    rows: Vec<Vec<f64>>,
    lists: Vec<Vec<i64>>,
}

impl Element {
    fn column(&self, name: &str) -> Option<usize> {
        self.scalars.iter().position(|s| s == name)
    }
}

fn parse_ply(text: &str, path: &Path) -> Result<Vec<Element>> {
    let bad = |reason: String| Error::format(path, reason);
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    // property order within an element, true for the list property
    let mut layout: Vec<Vec<bool>> = Vec::new();
    let mut ended = false;
    for line in lines.by_ref() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.as_slice() {
            ["format", "ascii", _] => {}
            ["format", other, ..] => {
                return Err(bad(format!(
                    "unsupported PLY format {other:?}; only ascii is read"
                )))
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                elements.push(Element {
                    name: name.to_string(),
                    count: count
                        .parse()
                        .map_err(|_| bad(format!("bad element count {count:?}")))?,
                    ..Element::default()
                });
                layout.push(Vec::new());
            }
            ["property", "list", _, _, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?;
                if e.list.is_some() {
                    return Err(bad(format!("element {} has more than one list property", e.name)));
                }
                e.list = Some(name.to_string());
                layout.last_mut().expect("pushed with element").push(true);
            }
            ["property", _, name] => {
                let e = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element".into()))?;
                e.scalars.push(name.to_string());
                layout.last_mut().expect("pushed with element").push(false);
            }
            ["end_header"] => {
                ended = true;
                break;
            }
            _ => return Err(bad(format!("unrecognized header line {line:?}"))),
        }
    }
    if !ended {
        return Err(bad("missing end_header".into()));
    }
    let mut body = lines.filter(|l| !l.trim().is_empty());
    for (e, order) in elements.iter_mut().zip(&layout) {
        for row_index in 0..e.count {
            let line = body
                .next()
                .ok_or_else(|| bad(format!("element {} ends after {row_index} rows", e.name)))?;
            let mut tok = line.split_whitespace();
            let mut num = |what: &str| -> Result<f64> {
                let s = tok
                    .next()
                    .ok_or_else(|| bad(format!("short {what} row {row_index}")))?;
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad number {s:?} in {what} row {row_index}")))
            };
            let mut row = Vec::with_capacity(e.scalars.len());
            let mut list = Vec::new();
            for &is_list in order {
                if is_list {
                    let n = num(&e.name)? as usize;
                    for _ in 0..n {
                        list.push(num(&e.name)? as i64);
                    }
                } else {
                    row.push(num(&e.name)?);
                }
            }
            e.rows.push(row);
            e.lists.push(list);
        }
    }
    Ok(elements)
}

/// ASCII PLY with double-precision vertices (and normals when present) and
/// triangle faces.
pub fn encode_mesh_ply(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", mesh.vertices.len());
    s.push_str("property double x\nproperty double y\nproperty double z\n");
    if mesh.normals.is_some() {
        s.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    let _ = writeln!(s, "element face {}", mesh.faces.len());
    s.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices.iter().enumerate() {
        let _ = write!(s, "{} {} {}", v.x, v.y, v.z);
        if let Some(n) = &mesh.normals {
            let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        s.push('\n');
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "3 {} {} {}", f[0], f[1], f[2]);
    }
    s
}

/// Reads vertices, optional normals and faces; polygons are fan-triangulated.
pub fn decode_mesh_ply(text: &str, path: &Path) -> Result<TriangleMesh> {
    let elements = parse_ply(text, path)?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(path, "no vertex element"))?;
    let cols = |names: [&str; 3]| -> Option<[usize; 3]> {
        Some([
            vertex.column(names[0])?,
            vertex.column(names[1])?,
            vertex.column(names[2])?,
        ])
    };
    let [x, y, z] = cols(["x", "y", "z"]).ok_or_else(|| Error::format(path, "vertex element lacks x/y/z"))?;
    let vertices = vertex
        .rows
        .iter()
        .map(|r| Vector3::new(r[x], r[y], r[z]))
        .collect();
    let normals = cols(["nx", "ny", "nz"]).map(|[a, b, c]| {
        vertex
            .rows
            .iter()
            .map(|r| Vector3::new(r[a], r[b], r[c]))
            .collect()
    });
    let mut faces = Vec::new();
    if let Some(face) = elements.iter().find(|e| e.name == "face") {
        for poly in &face.lists {
            if poly.len() < 3 {
                return Err(Error::format(path, format!("face with {} vertices", poly.len())));
            }
            if poly.iter().any(|&i| i < 0 || i > u32::MAX as i64) {
                return Err(Error::format(path, "negative or oversized face index"));
            }
            for k in 1..poly.len() - 1 {
                faces.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
            }
        }
    }
    let mesh = TriangleMesh {
        vertices,
        faces,
        normals,
    };
    mesh.validate().map_err(|e| Error::format(path, e.to_string()))?;
    Ok(mesh)
}

pub fn write_mesh_ply(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_mesh_ply(mesh)).map_err(|e| Error::io(path, e))
}

pub fn read_mesh_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_mesh_ply(&text, path)
}

const SPLAT_PROPS: [&str; 16] = [
    "x", "y", "z", "scale_u", "scale_v", "rot_w", "rot_x", "rot_y", "rot_z", "opacity", "red", "green",
    "blue", "view", "row", "col",
];

/// Splat field as ASCII PLY: one vertex per splat with center, the two
/// scales, the rotation quaternion (w, x, y, z), opacity, linear RGB in [0, 1]
/// and the source view/row/col.
pub fn encode_splats_ply(field: &SplatField) -> String {
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\ncomment 2D Gaussian surfels\n");
    let _ = writeln!(s, "element vertex {}", field.len());
    for (i, p) in SPLAT_PROPS.iter().enumerate() {
        let ty = if i >= 13 { "uint" } else { "double" };
        let _ = writeln!(s, "property {ty} {p}");
    }
    s.push_str("end_header\n");
    for (sp, pr) in field.splats.iter().zip(&field.provenance) {
        let q = sp.rotation.quaternion();
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            sp.mu.x,
            sp.mu.y,
            sp.mu.z,
            sp.scale.x,
            sp.scale.y,
            q.w,
            q.i,
            q.j,
            q.k,
            sp.opacity,
            sp.color.x,
            sp.color.y,
            sp.color.z,
            pr.view,
            pr.row,
            pr.col
        );
    }
    s
}

pub fn decode_splats_ply(text: &str, path: &Path) -> Result<SplatField> {
    let elements = parse_ply(text, path)?;
    let v = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(path, "no vertex element"))?;
    let mut col = [0usize; 16];
    for (slot, name) in col.iter_mut().zip(SPLAT_PROPS) {
        *slot = v
            .column(name)
            .ok_or_else(|| Error::format(path, format!("missing splat property {name}")))?;
    }
    let mut splats = Vec::with_capacity(v.count);
    let mut provenance = Vec::with_capacity(v.count);
    for r in &v.rows {
        let g = |k: usize| r[col[k]];
        let q = Quaternion::new(g(5), g(6), g(7), g(8));
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(Error::format(
                path,
                format!("rotation quaternion has norm {}", q.norm()),
            ));
        }
        splats.push(Splat2D {
            mu: Vector3::new(g(0), g(1), g(2)),
            scale: Vector2::new(g(3), g(4)),
            rotation: if (q.norm() - 1.0).abs() <= 4.0 * f64::EPSILON {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            },
            opacity: g(9),
            color: Vector3::new(g(10), g(11), g(12)),
        });
        provenance.push(Provenance {
            view: g(13) as u32,
            row: g(14) as u32,
            col: g(15) as u32,
        });
    }
    SplatField::new(splats, provenance).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_splats_ply(path: impl AsRef<Path>, field: &SplatField) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_splats_ply(field)).map_err(|e| Error::io(path, e))
}

pub fn read_splats_ply(path: impl AsRef<Path>) -> Result<SplatField> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_splats_ply(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetra() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.1, 0.0),
                Vector3::new(0.0, 1.0 / 3.0, 0.0),
                Vector3::new(1e-7, 0.0, -2.5),
            ],
            vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn mesh_roundtrip_is_exact() {
        let m = tetra();
        let text = encode_mesh_ply(&m);
        let back = decode_mesh_ply(&text, Path::new("m.ply")).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_mesh_ply(&back), text);
        let mut with_n = m.clone();
        with_n.normals = Some(vec![Vector3::new(0.0, 0.0, 1.0); 4]);
        assert_eq!(
            decode_mesh_ply(&encode_mesh_ply(&with_n), Path::new("m")).unwrap(),
            with_n
        );
    }

    #[test]
    fn quads_are_triangulated_and_extra_properties_ignored() {
        let text =
            "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\n\
                    property uchar red\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n\
                    0 0 0 255\n1 0 0 0\n1 1 0 0\n0 1 0 0\n4 0 1 2 3\n";
        let m = decode_mesh_ply(text, Path::new("q")).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let p = Path::new("bad.ply");
        assert!(decode_mesh_ply("plyx\n", p).is_err());
        assert!(decode_mesh_ply("ply\nformat binary_little_endian 1.0\nend_header\n", p).is_err());
        let short = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n";
        assert!(decode_mesh_ply(short, p).is_err());
        let out_of_range = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\n\
                            element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 0 5\n";
        assert!(decode_mesh_ply(out_of_range, p).is_err());
    }

    #[test]
    fn splat_roundtrip_is_exact() {
        let splats = vec![
            Splat2D {
                mu: Vector3::new(0.1, -0.2, 2.0),
                scale: Vector2::new(0.01, 0.03),
                rotation: UnitQuaternion::from_euler_angles(0.3, -0.1, 0.7),
                opacity: 0.8,
                color: Vector3::new(0.2, 0.5, 0.9),
            },
            Splat2D {
                mu: Vector3::new(1.0 / 3.0, 0.0, 5.5),
                scale: Vector2::new(0.2, 0.2),
                rotation: UnitQuaternion::identity(),
                opacity: 0.05,
                color: Vector3::new(1.0, 0.0, 0.25),
            },
        ];
        let prov = vec![
            Provenance {
                view: 0,
                row: 3,
                col: 4,
            },
            Provenance {
                view: 1,
                row: 0,
                col: 7,
            },
        ];
        let field = SplatField::new(splats, prov).unwrap();
        let text = encode_splats_ply(&field);
        let back = decode_splats_ply(&text, Path::new("s.ply")).unwrap();
        assert_eq!(back, field);
        assert_eq!(encode_splats_ply(&back), text);
    }
}
