//! File formats: PNG images, PFM float maps, ASCII PLY/OBJ meshes, PLY
//! splat fields and the JSON camera list.

mod cameras;
mod obj;
mod pfm;
mod ply;
mod png;

pub use cameras::{load_bundle, parse_cameras, read_cameras, write_cameras, Bundle, CameraEntry, CameraFile};
pub use obj::{decode_obj, encode_obj, read_obj, write_obj};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use ply::{
    decode_mesh_ply, decode_splats_ply, encode_mesh_ply, encode_splats_ply, read_mesh_ply, read_splats_ply,
    write_mesh_ply, write_splats_ply,
};
pub use png::{encode_png, read_png, write_png};

use std::path::Path;

use crate::error::Result;
use crate::meshing::TriangleMesh;

/// Reads a mesh by extension (`.ply` or `.obj`).
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("ply") => read_mesh_ply(path),
        Some("obj") => read_obj(path),
        _ => Err(crate::Error::format(
            path,
            "unknown mesh extension, expected .ply or .obj",
        )),
    }
}
