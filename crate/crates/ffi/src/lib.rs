//! C ABI over the reconstruction pipeline.
//!
//! Objects cross the boundary as opaque handles created by `ss_*` constructors
//! and released with the matching `ss_*_free`. Every fallible call returns an
//! [`SsStatus`]; on failure a message is kept per thread and can be read with
//! [`ss_last_error`]. Panics are caught and reported as `SS_STATUS_PANIC`.
//! Handles are not synchronized: share one across threads only for reading.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use sparse_surfel::evaluation::evaluate_mesh;
use sparse_surfel::fit::{fit_from, forward_reconstruct, FitConfig, FitInputs, ReconstructConfig};
use sparse_surfel::gaussian_field::SplatField;
use sparse_surfel::geometry::{ImageGrid, View};
use sparse_surfel::io;
use sparse_surfel::meshing::{extract_mesh, Preset, TriangleMesh, TsdfConfig};
use sparse_surfel::rasterizer::{render, RenderConfig};
use sparse_surfel::scene::{
    perturb_normals, synthesize, RigConfig, SceneKind, SceneSpec, Texture, TextureKind,
};
use sparse_surfel::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Empty = 5,
    Runtime = 6,
    Panic = 7,
}

/// Posed views with optional pseudo ground-truth normals.
pub struct SsViews {
    views: Vec<View>,
    pseudo_normals: Vec<Option<ImageGrid>>,
}

pub struct SsField(SplatField);

pub struct SsMesh(TriangleMesh);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SsMeshMetrics {
    pub cd: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsSceneKind {
    TexturedPlane = 0,
    BoxRoom = 1,
    SphereRoom = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsPreset {
    Re10k = 0,
    Scannet = 1,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SsStatus {
    match e {
        Error::Io { .. } => SsStatus::Io,
        Error::Format { .. } => SsStatus::Format,
        Error::Invalid { .. } | Error::ShapeMismatch(_) | Error::NonDivisibleSize { .. } => {
            SsStatus::InvalidArgument
        }
        Error::EmptyMesh | Error::EmptyCloud | Error::EmptyMask | Error::EmptyAfterCull(_) => SsStatus::Empty,
        _ => SsStatus::Runtime,
    }
}

struct Fail(SsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SsStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            SsStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SsStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next `ss_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ss_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ss_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Renders a synthetic scene with `count` cameras of `width` x `height`
/// pixels (focal 0.8 * width, baseline 0.3, "scannet" near/far). `dims`
/// points at three values. `gt_out` may be NULL.
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn ss_views_synthesize(
    kind: SsSceneKind,
    dims: *const f64,
    width: usize,
    height: usize,
    count: usize,
    seed: u64,
    normal_noise_deg: f64,
    views_out: *mut *mut SsViews,
    gt_out: *mut *mut SsMesh,
) -> SsStatus {
    guard(|| {
        if dims.is_null() {
            return Err(null("dims"));
        }
        if views_out.is_null() {
            return Err(null("views_out"));
        }
        let d = std::slice::from_raw_parts(dims, 3);
        let kind = match kind {
            SsSceneKind::TexturedPlane => SceneKind::TexturedPlane,
            SsSceneKind::BoxRoom => SceneKind::BoxRoom,
            SsSceneKind::SphereRoom => SceneKind::SphereRoom,
        };
        let mut spec = SceneSpec::new(
            kind,
            [d[0], d[1], d[2]],
            Texture::new(TextureKind::ValueNoise, 2.0, seed),
        );
        spec.seed = seed;
        if count == 0 {
            return Err(invalid("count must be positive"));
        }
        let rig = RigConfig {
            count,
            width,
            height,
            focal: 0.8 * width as f64,
            baseline: 0.3,
            near: Preset::Scannet.near(),
            far: Preset::Scannet.far(),
        };
        let scene = synthesize(&spec, &rig)?;
        let pseudo_normals = scene
            .renders
            .iter()
            .enumerate()
            .map(|(i, r)| {
                perturb_normals(r, normal_noise_deg, seed.wrapping_add(i as u64)).map(|p| Some(p.normal))
            })
            .collect::<Result<_, _>>()?;
        if !gt_out.is_null() {
            put(gt_out, SsMesh(scene.mesh))?;
        }
        put(
            views_out,
            SsViews {
                views: scene.views,
                pseudo_normals,
            },
        )
    })
}

/// Loads a camera JSON bundle and the images it references.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ss_views_load(path: *const c_char, out: *mut *mut SsViews) -> SsStatus {
    guard(|| {
        let b = io::load_bundle(path_arg(path, "path")?)?;
        let pseudo_normals = b
            .pseudo_normals
            .into_iter()
            .zip(b.normals)
            .map(|(p, n)| p.or(n))
            .collect();
        put(
            out,
            SsViews {
                views: b.views,
                pseudo_normals,
            },
        )
    })
}

/// Number of views, 0 for NULL.
///
/// # Safety
/// `views` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_views_count(views: *const SsViews) -> usize {
    views.as_ref().map_or(0, |v| v.views.len())
}

/// Image size of view `index`.
///
/// # Safety
/// Handle and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_views_size(
    views: *const SsViews,
    index: usize,
    width: *mut usize,
    height: *mut usize,
) -> SsStatus {
    guard(|| {
        let v = as_ref(views, "views")?;
        let view = v
            .views
            .get(index)
            .ok_or_else(|| invalid(format!("view index {index} out of range")))?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        *width = view.width();
        *height = view.height();
        Ok(())
    })
}

/// # Safety
/// `views` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_views_free(views: *mut SsViews) {
    if !views.is_null() {
        drop(Box::from_raw(views));
    }
}

/// Two-view forward pass on views 0 and 1, followed by `steps` optimizer
/// steps when `steps > 0`. Views without normal maps get no normal targets.
///
/// # Safety
/// Handle and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_reconstruct(
    views: *const SsViews,
    depth_bins: usize,
    steps: usize,
    seed: u64,
    out: *mut *mut SsField,
) -> SsStatus {
    guard(|| {
        let v = as_ref(views, "views")?;
        if v.views.len() < 2 {
            return Err(invalid("need at least two views"));
        }
        if depth_bins < 2 {
            return Err(invalid("depth_bins must be at least 2"));
        }
        let pn: Vec<ImageGrid> = (0..2)
            .map(|i| {
                v.pseudo_normals[i]
                    .clone()
                    .unwrap_or_else(|| ImageGrid::zeros(v.views[i].height(), v.views[i].width(), 3))
            })
            .collect();
        let pair = [&v.views[0], &v.views[1]];
        let recon = ReconstructConfig {
            depth_bins,
            ..ReconstructConfig::default()
        };
        let fwd = forward_reconstruct(pair, Some([&pn[0], &pn[1]]), &recon)?;
        let field = if steps > 0 {
            let inputs = FitInputs {
                views: pair,
                pseudo_normals: [&pn[0], &pn[1]],
                holdout: None,
            };
            let cfg = FitConfig {
                steps,
                seed,
                ..FitConfig::default()
            };
            fit_from(&inputs, &fwd, &cfg)?.field
        } else {
            fwd.field
        };
        put(out, SsField(field))
    })
}

/// # Safety
/// `field` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_field_len(field: *const SsField) -> usize {
    field.as_ref().map_or(0, |f| f.0.len())
}

/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ss_field_read_ply(path: *const c_char, out: *mut *mut SsField) -> SsStatus {
    guard(|| put(out, SsField(io::read_splats_ply(path_arg(path, "path")?)?)))
}

/// # Safety
/// Handle and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_field_write_ply(field: *const SsField, path: *const c_char) -> SsStatus {
    guard(|| {
        Ok(io::write_splats_ply(
            path_arg(path, "path")?,
            &as_ref(field, "field")?.0,
        )?)
    })
}

/// Renders the field at view `index`. `rgb` and `normal` hold
/// `width * height * 3` doubles, `depth` and `acc` `width * height`, all row
/// major. Any output may be NULL.
///
/// # Safety
/// Non-NULL buffers must have the lengths above.
#[no_mangle]
pub unsafe extern "C" fn ss_field_render(
    field: *const SsField,
    views: *const SsViews,
    index: usize,
    rgb: *mut f64,
    depth: *mut f64,
    normal: *mut f64,
    acc: *mut f64,
) -> SsStatus {
    guard(|| {
        let f = as_ref(field, "field")?;
        let v = as_ref(views, "views")?;
        let view = v
            .views
            .get(index)
            .ok_or_else(|| invalid(format!("view index {index} out of range")))?;
        let out = render(&f.0, view, &RenderConfig::default());
        for (dst, grid) in [
            (rgb, &out.rgb),
            (depth, &out.depth),
            (normal, &out.normal),
            (acc, &out.acc),
        ] {
            if !dst.is_null() {
                std::slice::from_raw_parts_mut(dst, grid.data().len()).copy_from_slice(grid.data());
            }
        }
        Ok(())
    })
}

/// # Safety
/// `field` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_field_free(field: *mut SsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// TSDF fusion of rendered depth and marching cubes, culled to the views.
/// `voxel` and `trunc` override the preset when positive.
///
/// # Safety
/// Handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_extract_mesh(
    field: *const SsField,
    views: *const SsViews,
    preset: SsPreset,
    voxel: f64,
    trunc: f64,
    out: *mut *mut SsMesh,
) -> SsStatus {
    guard(|| {
        let f = as_ref(field, "field")?;
        let v = as_ref(views, "views")?;
        let mut cfg = TsdfConfig::from_preset(match preset {
            SsPreset::Re10k => Preset::Re10k,
            SsPreset::Scannet => Preset::Scannet,
        });
        if voxel > 0.0 {
            cfg.voxel_size = voxel;
        }
        if trunc > 0.0 {
            cfg.truncation = trunc;
        }
        let ex = extract_mesh(&f.0, &v.views, &cfg, &RenderConfig::default())?;
        put(out, SsMesh(ex.mesh))
    })
}

/// Reads a `.ply` or `.obj` mesh.
///
/// # Safety
/// `path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_read(path: *const c_char, out: *mut *mut SsMesh) -> SsStatus {
    guard(|| put(out, SsMesh(io::read_mesh(path_arg(path, "path")?)?)))
}

/// # Safety
/// Handle and `path` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_write_ply(mesh: *const SsMesh, path: *const c_char) -> SsStatus {
    guard(|| {
        Ok(io::write_mesh_ply(
            path_arg(path, "path")?,
            &as_ref(mesh, "mesh")?.0,
        )?)
    })
}

/// # Safety
/// `mesh` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_vertex_count(mesh: *const SsMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.vertices.len())
}

/// # Safety
/// `mesh` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_face_count(mesh: *const SsMesh) -> usize {
    mesh.as_ref().map_or(0, |m| m.0.faces.len())
}

/// Copies `3 * vertex_count` coordinates into `out`; `len` is its capacity.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_vertices(mesh: *const SsMesh, out: *mut f64, len: usize) -> SsStatus {
    guard(|| {
        let m = &as_ref(mesh, "mesh")?.0;
        let need = 3 * m.vertices.len();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < need {
            return Err(invalid(format!("buffer holds {len} values, need {need}")));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, v) in dst.chunks_exact_mut(3).zip(&m.vertices) {
            d.copy_from_slice(v.as_slice());
        }
        Ok(())
    })
}

/// Copies `3 * face_count` zero-based indices into `out`; `len` is its capacity.
///
/// # Safety
/// `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_faces(mesh: *const SsMesh, out: *mut u32, len: usize) -> SsStatus {
    guard(|| {
        let m = &as_ref(mesh, "mesh")?.0;
        let need = 3 * m.faces.len();
        if out.is_null() {
            return Err(null("out"));
        }
        if len < need {
            return Err(invalid(format!("buffer holds {len} values, need {need}")));
        }
        let dst = std::slice::from_raw_parts_mut(out, need);
        for (d, f) in dst.chunks_exact_mut(3).zip(&m.faces) {
            d.copy_from_slice(f);
        }
        Ok(())
    })
}

/// # Safety
/// `mesh` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_free(mesh: *mut SsMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// Chamfer distance and F-score of `pred` against `gt`: `samples` points on
/// the prediction, four times as many on the ground truth, both culled to
/// the views. `SS_STATUS_EMPTY` when either side is empty after culling.
///
/// # Safety
/// Handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ss_mesh_metrics(
    pred: *const SsMesh,
    gt: *const SsMesh,
    views: *const SsViews,
    tau: f64,
    samples: usize,
    seed: u64,
    out: *mut SsMeshMetrics,
) -> SsStatus {
    guard(|| {
        let m = evaluate_mesh(
            &as_ref(pred, "pred")?.0,
            &as_ref(gt, "gt")?.0,
            &as_ref(views, "views")?.views,
            tau,
            samples,
            seed,
        )?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = SsMeshMetrics {
            cd: m.cd,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        };
        Ok(())
    })
}
