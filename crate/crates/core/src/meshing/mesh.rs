use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Indexed triangle mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let mesh = Self {
            vertices,
            faces,
            normals: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len() as u32;
        if let Some(f) = self.faces.iter().find(|f| f.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(
                "mesh faces",
                format!("face {f:?} indexes past {n} vertices"),
            ));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::invalid("mesh vertices", "non-finite coordinate"));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.vertices.len() {
                return Err(Error::invalid("mesh normals", "count differs from vertex count"));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    #[inline]
    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.faces[f];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Unnormalized face normal, `(b - a) x (c - a)`; its length is twice the area.
    pub fn face_cross(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_centroid(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (a + b + c) / 3.0
    }

    pub fn area(&self) -> f64 {
        (0..self.faces.len()).map(|f| self.face_area(f)).sum()
    }

    /// Keeps only the faces selected by `keep` and drops unreferenced vertices,
    /// preserving relative order.
    pub fn filter_faces(&self, keep: impl Fn(usize) -> bool) -> TriangleMesh {
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        let mut faces = Vec::new();
        for (fi, face) in self.faces.iter().enumerate() {
            if !keep(fi) {
                continue;
            }
            let mut out = [0u32; 3];
            for (k, &vi) in face.iter().enumerate() {
                let slot = &mut remap[vi as usize];
                if *slot == u32::MAX {
                    *slot = vertices.len() as u32;
                    vertices.push(self.vertices[vi as usize]);
                    if let (Some(dst), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                        dst.push(src[vi as usize]);
                    }
                }
                out[k] = *slot;
            }
            faces.push(out);
        }
        TriangleMesh {
            vertices,
            faces,
            normals,
        }
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.edge_uses().len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// True when every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        !self.faces.is_empty() && self.edge_uses().values().all(|&n| n == 2)
    }

    fn edge_uses(&self) -> std::collections::HashMap<(u32, u32), usize> {
        let mut edges = std::collections::HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }
}
