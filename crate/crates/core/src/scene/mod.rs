//! Analytic synthetic scenes and their exact oracle renders.
//!
//! The ray caster here shares no code with the surfel rasterizer and serves
//! as ground truth for depth, normals and images.

mod perturb;
mod raycast;
mod rig;
mod shapes;
mod texture;

pub use perturb::perturb_normals;
pub use raycast::{raycast_render, Bvh, Hit, OracleRender};
pub use rig::{camera_rig, synthesize, synthesize_with_cameras, RigConfig, SyntheticScene};
pub use shapes::{make_scene, SceneKind, SceneSpec};
pub use texture::{FlatBand, Texture, TextureKind};
