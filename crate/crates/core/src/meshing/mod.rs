//! Depth fusion into a truncated signed distance volume and surface extraction.

mod extract;
mod marching;
mod mesh;
mod tables;
mod tsdf;

pub use extract::{
    extract_mesh, frustum_cull_mesh, frustum_cull_points, fusion_views, interpolate_poses, MeshExtraction,
};
pub use marching::marching_cubes;
pub use mesh::TriangleMesh;
pub use tsdf::{tsdf_integrate, Preset, TsdfConfig, TsdfVolume, VoxelBlock, BLOCK};
