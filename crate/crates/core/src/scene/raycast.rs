use nalgebra::Vector3;
use rayon::prelude::*;

use super::texture::Texture;
use crate::geometry::{ImageGrid, View};
use crate::meshing::TriangleMesh;

/// Exact per-pixel oracle render: color, camera-space depth (0 = no hit) and
/// camera-frame unit normals facing the viewer.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRender {
    pub image: ImageGrid,
    pub depth: ImageGrid,
    pub normal: ImageGrid,
}

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: &Vector3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    /// Slab test; returns the entry distance when the box is hit before `t_max`.
    #[inline]
    fn hit(&self, origin: &Vector3<f64>, inv_dir: &Vector3<f64>, t_max: f64) -> Option<f64> {
        let mut t0 = 0.0f64;
        let mut t1 = t_max;
        for a in 0..3 {
            let mut ta = (self.min[a] - origin[a]) * inv_dir[a];
            let mut tb = (self.max[a] - origin[a]) * inv_dir[a];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            // NaN from 0 * inf leaves the bound unchanged
            if ta > t0 {
                t0 = ta;
            }
            if tb < t1 {
                t1 = tb;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

enum Node {
    Leaf { bounds: Aabb, start: usize, end: usize },
    Inner { bounds: Aabb, left: usize, right: usize },
}

impl Node {
    fn bounds(&self) -> &Aabb {
        match self {
            Node::Leaf { bounds, .. } | Node::Inner { bounds, .. } => bounds,
        }
    }
}

/// Bounding-volume hierarchy over a mesh's triangles.
pub struct Bvh<'a> {
    mesh: &'a TriangleMesh,
    nodes: Vec<Node>,
    order: Vec<usize>,
}

/// Nearest ray hit: distance along the (unnormalized) ray and face index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
}

const LEAF_SIZE: usize = 4;

impl<'a> Bvh<'a> {
    pub fn new(mesh: &'a TriangleMesh) -> Self {
        let mut order: Vec<usize> = (0..mesh.faces.len()).collect();
        let centroids: Vec<Vector3<f64>> = (0..mesh.faces.len()).map(|f| mesh.face_centroid(f)).collect();
        let mut bvh = Bvh {
            mesh,
            nodes: Vec::new(),
            order: Vec::new(),
        };
        if !order.is_empty() {
            let n = order.len();
            bvh.build(&mut order, &centroids, 0, n);
        }
        bvh.order = order;
        bvh
    }

    fn build(&mut self, order: &mut [usize], centroids: &[Vector3<f64>], start: usize, end: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &f in &order[start..end] {
            for v in self.mesh.triangle(f) {
                bounds.grow(&v);
            }
            cbounds.grow(&centroids[f]);
        }
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { bounds, start, end });
            return id;
        }
        let extent = cbounds.max - cbounds.min;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        order[start..end].sort_by(|&a, &b| centroids[a][axis].total_cmp(&centroids[b][axis]).then(a.cmp(&b)));
        let mid = (start + end) / 2;
        self.nodes.push(Node::Leaf { bounds, start, end });
        let left = self.build(order, centroids, start, mid);
        let right = self.build(order, centroids, mid, end);
        self.nodes[id] = Node::Inner { bounds, left, right };
        id
    }

    /// Nearest intersection with `t > t_min`; ties go to the lower face index.
    pub fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, t_min: f64) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        let inv = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut best: Option<Hit> = None;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id];
            let t_max = best.map_or(f64::INFINITY, |h| h.t);
            match node.bounds().hit(origin, &inv, t_max) {
                None => continue,
                Some(_) => {}
            }
            match node {
                Node::Leaf { start, end, .. } => {
                    for &f in &self.order[*start..*end] {
                        if let Some(t) = ray_triangle(origin, dir, &self.mesh.triangle(f)) {
                            if t <= t_min {
                                continue;
                            }
                            let better = match best {
                                None => true,
                                Some(b) => t < b.t || (t == b.t && f < b.face),
                            };
                            if better {
                                best = Some(Hit { t, face: f });
                            }
                        }
                    }
                }
                Node::Inner { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        best
    }
}

/// Möller–Trumbore; two-sided.
#[inline]
fn ray_triangle(origin: &Vector3<f64>, dir: &Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Ray casts `mesh` through every pixel center of `view`. Hits outside the
/// view's `[near, far]` range are reported as misses.
pub fn raycast_render(mesh: &TriangleMesh, view: &View, texture: &Texture) -> OracleRender {
    let bvh = Bvh::new(mesh);
    let k = &view.intrinsics;
    let (h, w) = (k.height, k.width);
    let rot_c2w = view.pose.rotation.inverse();
    let origin = view.pose.center();
    let face_normals: Vec<Vector3<f64>> = (0..mesh.faces.len())
        .map(|f| mesh.face_cross(f).normalize())
        .collect();
    let rows: Vec<Vec<[f64; 7]>> = (0..h)
        .into_par_iter()
        .map(|r| {
            (0..w)
                .map(|c| {
                    let ray_cam = k.ray(c as f64, r as f64);
                    let dir = rot_c2w * ray_cam;
                    match bvh.intersect(&origin, &dir, 0.0) {
                        Some(hit) if hit.t >= view.near && hit.t <= view.far => {
                            let p = origin + dir * hit.t;
                            let rgb = texture.color(&p);
                            let mut n = view.pose.rotation * face_normals[hit.face];
                            if n.dot(&ray_cam) > 0.0 {
                                n = -n;
                            }
                            [rgb[0], rgb[1], rgb[2], hit.t, n.x, n.y, n.z]
                        }
                        _ => [0.0; 7],
                    }
                })
                .collect()
        })
        .collect();
    let mut image = ImageGrid::zeros(h, w, 3);
    let mut depth = ImageGrid::zeros(h, w, 1);
    let mut normal = ImageGrid::zeros(h, w, 3);
    for (r, row) in rows.iter().enumerate() {
        for (c, px) in row.iter().enumerate() {
            image.pixel_mut(r, c).copy_from_slice(&px[0..3]);
            depth.set(r, c, 0, px[3]);
            normal.pixel_mut(r, c).copy_from_slice(&px[4..7]);
        }
    }
    OracleRender { image, depth, normal }
}
