use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::texture::Texture;
use crate::error::{Error, Result};
use crate::meshing::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    /// Square facing the origin: `dims = [width, height, distance]`.
    TexturedPlane,
    /// Closed box centered at the origin, faces pointing inward: `dims = [x, y, z]`.
    BoxRoom,
    /// Closed icosphere centered at the origin, faces pointing inward: `dims[0]` is the radius.
    SphereRoom,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "textured_plane" | "plane" => Ok(SceneKind::TexturedPlane),
            "box_room" | "box" => Ok(SceneKind::BoxRoom),
            "sphere_room" | "sphere" => Ok(SceneKind::SphereRoom),
            other => Err(Error::invalid("scene kind", format!("unknown kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub dims: [f64; 3],
    pub texture: Texture,
    #[serde(default = "default_subdivision")]
    pub subdivision: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_subdivision() -> u32 {
    4
}

impl SceneSpec {
    pub fn new(kind: SceneKind, dims: [f64; 3], texture: Texture) -> Self {
        Self {
            kind,
            dims,
            texture,
            subdivision: default_subdivision(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let needed = match self.kind {
            SceneKind::SphereRoom => 1,
            _ => 3,
        };
        if self.dims[..needed].iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(Error::invalid(
                "dims",
                format!("must be positive, got {:?}", self.dims),
            ));
        }
        if !(self.texture.frequency > 0.0 && self.texture.frequency.is_finite()) {
            return Err(Error::invalid(
                "texture.frequency",
                format!("must be positive, got {}", self.texture.frequency),
            ));
        }
        if self.kind == SceneKind::SphereRoom && self.subdivision > 7 {
            return Err(Error::invalid("subdivision", "at most 7 levels are supported"));
        }
        Ok(())
    }

    /// Characteristic length of the scene, used to scale rigs and learning rates.
    pub fn scale(&self) -> f64 {
        match self.kind {
            SceneKind::TexturedPlane => self.dims[2],
            SceneKind::BoxRoom => self.dims.iter().cloned().fold(0.0, f64::max),
            SceneKind::SphereRoom => 2.0 * self.dims[0],
        }
    }
}

/// Ground-truth geometry for a scene spec.
pub fn make_scene(spec: &SceneSpec) -> Result<TriangleMesh> {
    spec.validate()?;
    Ok(match spec.kind {
        SceneKind::TexturedPlane => plane(spec.dims[0], spec.dims[1], spec.dims[2]),
        SceneKind::BoxRoom => box_room(spec.dims),
        SceneKind::SphereRoom => icosphere_room(spec.dims[0], spec.subdivision),
    })
}

fn plane(w: f64, h: f64, z: f64) -> TriangleMesh {
    let (hw, hh) = (w / 2.0, h / 2.0);
    let vertices = vec![
        Vector3::new(-hw, -hh, z),
        Vector3::new(hw, -hh, z),
        Vector3::new(hw, hh, z),
        Vector3::new(-hw, hh, z),
    ];
    // wound so the face normal points toward the origin (-z)
    let faces = vec![[0, 2, 1], [0, 3, 2]];
    TriangleMesh {
        vertices,
        faces,
        normals: None,
    }
}

fn box_room(dims: [f64; 3]) -> TriangleMesh {
    let h = Vector3::new(dims[0], dims[1], dims[2]) / 2.0;
    let vertices: Vec<_> = (0..8)
        .map(|i| {
            Vector3::new(
                if i & 1 == 0 { -h.x } else { h.x },
                if i & 2 == 0 { -h.y } else { h.y },
                if i & 4 == 0 { -h.z } else { h.z },
            )
        })
        .collect();
    // quads wound so their normals face the interior
    let quads: [[u32; 4]; 6] = [
        [0, 2, 6, 4], // -x
        [1, 5, 7, 3], // +x
        [0, 4, 5, 1], // -y
        [2, 3, 7, 6], // +y
        [0, 1, 3, 2], // -z
        [4, 6, 7, 5], // +z
    ];
    let mut faces = Vec::with_capacity(12);
    for q in quads {
        faces.push([q[0], q[1], q[2]]);
        faces.push([q[0], q[2], q[3]]);
    }
    TriangleMesh {
        vertices,
        faces,
        normals: None,
    }
}

/// Icosphere with vertices at both poles `(0, 0, +-r)`, wound inward.
fn icosphere_room(radius: f64, levels: u32) -> TriangleMesh {
    let z1 = 1.0 / 5f64.sqrt();
    let r1 = 2.0 / 5f64.sqrt();
    let mut verts = vec![Vector3::new(0.0, 0.0, 1.0)];
    for k in 0..5 {
        let a = (k as f64) * std::f64::consts::TAU / 5.0;
        verts.push(Vector3::new(r1 * a.cos(), r1 * a.sin(), z1));
    }
    for k in 0..5 {
        let a = (k as f64 + 0.5) * std::f64::consts::TAU / 5.0;
        verts.push(Vector3::new(r1 * a.cos(), r1 * a.sin(), -z1));
    }
    verts.push(Vector3::new(0.0, 0.0, -1.0));
    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(20);
    for k in 0..5u32 {
        let (u0, u1) = (1 + k, 1 + (k + 1) % 5);
        let (l0, l1) = (6 + k, 6 + (k + 1) % 5);
        faces.push([0, u0, u1]);
        faces.push([u0, l0, u1]);
        faces.push([u1, l0, l1]);
        faces.push([11, l1, l0]);
    }
    for _ in 0..levels {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: u32, b: u32, verts: &mut Vec<Vector3<f64>>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (verts[a as usize] + verts[b as usize]).normalize();
                verts.push(m);
                (verts.len() - 1) as u32
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    // the construction above is wound outward; flip to face the interior
    let faces = faces.into_iter().map(|[a, b, c]| [a, c, b]).collect();
    TriangleMesh {
        vertices: verts.into_iter().map(|v| v * radius).collect(),
        faces,
        normals: None,
    }
}
