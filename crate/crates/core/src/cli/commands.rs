use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CliError, EvalArgs, GradcheckArgs, ReconstructArgs, RenderArgs, RunConfig, StageExt, SynthArgs};
use crate::error::{Error, Result};
use crate::evaluation::{
    depth_metrics, evaluate_mesh, normal_metrics, DepthMetrics, MeshMetrics, NormalMetrics,
};
use crate::fit::{fit_from, forward_reconstruct, FitInputs, StepLosses};
use crate::geometry::{ImageGrid, View};
use crate::gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
use crate::io::{
    load_bundle, read_cameras, read_mesh, read_pfm, read_splats_ply, write_cameras, write_mesh_ply,
    write_pfm, write_png, write_splats_ply, CameraEntry, CameraFile,
};
use crate::meshing::extract_mesh;
use crate::rasterizer::{render, RenderConfig, RenderOutput};
use crate::scene::{perturb_normals, synthesize, RigConfig, SceneSpec, Texture};

/// Pixels rendered with less accumulated opacity than this are written as
/// zero depth and zero normal.
const MAP_MIN_ACC: f64 = 0.5;

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    write_text(path, &(text + "\n"))
}

fn out_dirs(out: &Path) -> Result<[PathBuf; 4]> {
    let dirs = ["inputs", "intermediates", "mesh", "metrics"].map(|d| out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    Ok(dirs)
}

/// Renders a synthetic scene into `<out>/inputs`: `view_<i>.png`, exact
/// `depth_<i>.pfm` and camera-frame `normal_<i>.pfm`, noisy
/// `pseudo_normal_<i>.pfm`, `cameras.json`, `scene.json` and `gt.ply`.
/// Returns the camera file path.
pub fn cmd_synth(a: &SynthArgs) -> Result<PathBuf, CliError> {
    let spec = match &a.scene_json {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::io(path, e))
                .stage("scene")?;
            serde_json::from_str::<SceneSpec>(&text)
                .map_err(|e| Error::format(path, e.to_string()))
                .stage("scene")?
        }
        None => {
            if a.dims.len() != 3 {
                return Err(Error::invalid(
                    "dims",
                    format!("need three comma-separated values, got {}", a.dims.len()),
                ))
                .stage("scene");
            }
            let mut s = SceneSpec::new(
                a.scene,
                [a.dims[0], a.dims[1], a.dims[2]],
                Texture::new(a.texture.into(), a.texture_frequency, a.seed),
            );
            s.seed = a.seed;
            s
        }
    };
    spec.validate().stage("scene")?;
    if a.views == 0 {
        return Err(Error::invalid("views", "need at least one")).stage("rig");
    }
    if !(a.normal_noise >= 0.0 && a.normal_noise.is_finite()) {
        return Err(Error::invalid(
            "normal-noise",
            format!("must be non-negative, got {}", a.normal_noise),
        ))
        .stage("rig");
    }
    let rig = RigConfig {
        count: a.views,
        width: a.width,
        height: a.height,
        focal: a.focal.unwrap_or(0.8 * a.width as f64),
        baseline: a.baseline,
        near: a.preset.near(),
        far: a.preset.far(),
    };
    let scene = synthesize(&spec, &rig).stage("synth")?;

    let dir = a.out.join("inputs");
    create_dir(&dir).stage("write")?;
    let mut cameras = Vec::with_capacity(scene.views.len());
    for (i, (view, oracle)) in scene.views.iter().zip(&scene.renders).enumerate() {
        let pseudo = perturb_normals(oracle, a.normal_noise, a.seed.wrapping_add(i as u64)).stage("synth")?;
        let mut entry = CameraEntry::from_view(view, format!("view_{i}.png"));
        entry.depth = Some(format!("depth_{i}.pfm"));
        entry.normal = Some(format!("normal_{i}.pfm"));
        entry.pseudo_normal = Some(format!("pseudo_normal_{i}.pfm"));
        write_png(dir.join(&entry.image), &view.image).stage("write")?;
        write_pfm(dir.join(format!("depth_{i}.pfm")), &oracle.depth).stage("write")?;
        write_pfm(dir.join(format!("normal_{i}.pfm")), &oracle.normal).stage("write")?;
        write_pfm(dir.join(format!("pseudo_normal_{i}.pfm")), &pseudo.normal).stage("write")?;
        cameras.push(entry);
    }
    let json = dir.join("cameras.json");
    write_cameras(&json, &CameraFile { cameras }).stage("write")?;
    write_json(&dir.join("scene.json"), &spec).stage("write")?;
    write_mesh_ply(dir.join("gt.ply"), &scene.mesh).stage("write")?;
    log::info!("wrote {} views to {}", scene.views.len(), dir.display());
    Ok(json)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructSummary {
    pub splats: usize,
    pub degenerate_baseline: bool,
    pub normal_fallbacks: [usize; 2],
    pub initial: Option<StepLosses>,
    #[serde(rename = "final")]
    pub last: Option<StepLosses>,
    pub fused_views: usize,
    pub mesh_vertices: usize,
    pub mesh_faces: usize,
    pub eval: Option<MeshMetrics>,
}

/// Camera-frame normals normalized where the render is opaque enough, zero
/// elsewhere; depth zeroed on the same pixels.
fn clean_maps(out: &RenderOutput) -> (ImageGrid, ImageGrid) {
    let mut depth = out.depth.clone();
    let mut normal = out.normal.clone();
    for i in 0..depth.pixel_count() {
        let n = &mut normal.data_mut()[3 * i..3 * i + 3];
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if out.acc.data()[i] >= MAP_MIN_ACC && len > 0.0 {
            n.iter_mut().for_each(|v| *v /= len);
        } else {
            n.fill(0.0);
            depth.data_mut()[i] = 0.0;
        }
    }
    (depth, normal)
}

fn pseudo_normals_for(bundle: &crate::io::Bundle, i: usize) -> ImageGrid {
    if let Some(n) = bundle.pseudo_normals[i].as_ref().or(bundle.normals[i].as_ref()) {
        return n.clone();
    }
    log::warn!("view {i} has no normal map; the normal loss gets no targets there");
    let v = &bundle.views[i];
    ImageGrid::zeros(v.height(), v.width(), 3)
}

/// Forward pass, optional fit, fusion and meshing. Layout under `--out`:
/// `inputs/run.json`; `intermediates/` with per-view `coarse_depth`,
/// `confidence`, `forward_depth`, `forward_normal`, rendered `depth` and
/// `normal` PFMs, `splats_init.ply`, `splats.ply` and `fit_trace.csv`;
/// `mesh/mesh.ply`; `metrics/reconstruct.json` (and `metrics/eval.json`
/// with `--gt`).
pub fn cmd_reconstruct(a: &ReconstructArgs) -> Result<ReconstructSummary, CliError> {
    let cfg = RunConfig::from_args(a);
    cfg.validate().stage("config")?;
    let bundle = load_bundle(&a.cameras).stage("load")?;
    if bundle.views.len() < 2 {
        return Err(Error::invalid(
            "cameras",
            format!("need at least 2 views, got {}", bundle.views.len()),
        ))
        .stage("load");
    }
    let gt = a.gt.as_ref().map(read_mesh).transpose().stage("load")?;
    let [inputs_dir, inter, mesh_dir, metrics] = out_dirs(&a.out).stage("write")?;
    write_json(&inputs_dir.join("run.json"), &cfg).stage("write")?;

    let pn = [pseudo_normals_for(&bundle, 0), pseudo_normals_for(&bundle, 1)];
    let views = [&bundle.views[0], &bundle.views[1]];
    let fwd = forward_reconstruct(views, Some([&pn[0], &pn[1]]), &cfg.reconstruct).stage("forward")?;
    for i in 0..2 {
        write_pfm(inter.join(format!("coarse_depth_{i}.pfm")), &fwd.coarse_depth[i]).stage("write")?;
        write_pfm(inter.join(format!("confidence_{i}.pfm")), &fwd.confidence[i]).stage("write")?;
        write_pfm(inter.join(format!("forward_depth_{i}.pfm")), &fwd.depth[i]).stage("write")?;
        write_pfm(inter.join(format!("forward_normal_{i}.pfm")), &fwd.normals[i]).stage("write")?;
    }
    write_splats_ply(inter.join("splats_init.ply"), &fwd.field).stage("write")?;

    let (field, initial, last) = if cfg.fit.steps > 0 {
        let inputs = FitInputs {
            views,
            pseudo_normals: [&pn[0], &pn[1]],
            holdout: None,
        };
        let report = fit_from(&inputs, &fwd, &cfg.fit).stage("fit")?;
        write_text(&inter.join("fit_trace.csv"), &report.trace_csv()).stage("write")?;
        let (i, l) = (*report.initial(), *report.last());
        (report.field, Some(i), Some(l))
    } else {
        (fwd.field.clone(), None, None)
    };
    write_splats_ply(inter.join("splats.ply"), &field).stage("write")?;

    let render_cfg = RenderConfig::default();
    for (i, v) in bundle.views.iter().enumerate() {
        let (depth, normal) = clean_maps(&render(&field, v, &render_cfg));
        write_pfm(inter.join(format!("depth_{i}.pfm")), &depth).stage("write")?;
        write_pfm(inter.join(format!("normal_{i}.pfm")), &normal).stage("write")?;
    }

    let ex = extract_mesh(&field, &bundle.views, &cfg.tsdf, &render_cfg).stage("mesh")?;
    write_mesh_ply(mesh_dir.join("mesh.ply"), &ex.mesh).stage("write")?;
    if ex.mesh.is_empty() {
        log::warn!("extracted mesh is empty");
    }

    let eval = match &gt {
        Some(gt) => {
            let m =
                evaluate_mesh(&ex.mesh, gt, &bundle.views, cfg.tau, cfg.samples, cfg.seed).stage("eval")?;
            write_json(
                &metrics.join("eval.json"),
                &EvalReport {
                    mesh: m,
                    depth: Vec::new(),
                    normal: Vec::new(),
                },
            )
            .stage("write")?;
            Some(m)
        }
        None => None,
    };
    let summary = ReconstructSummary {
        splats: field.len(),
        degenerate_baseline: fwd.degenerate_baseline,
        normal_fallbacks: fwd.normal_fallbacks,
        initial,
        last,
        fused_views: ex.fused_views,
        mesh_vertices: ex.mesh.vertices.len(),
        mesh_faces: ex.mesh.faces.len(),
        eval,
    };
    write_json(&metrics.join("reconstruct.json"), &summary).stage("write")?;
    Ok(summary)
}

/// Per-view map scores carry the camera index they belong to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewDepth {
    pub view: usize,
    #[serde(flatten)]
    pub metrics: DepthMetrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewNormal {
    pub view: usize,
    #[serde(flatten)]
    pub metrics: NormalMetrics,
}

/// Contents of a metrics JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mesh: MeshMetrics,
    #[serde(default)]
    pub depth: Vec<ViewDepth>,
    #[serde(default)]
    pub normal: Vec<ViewNormal>,
}

fn read_if_exists(path: PathBuf) -> Result<Option<ImageGrid>> {
    if path.exists() {
        read_pfm(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn map_scores(bundle: &crate::io::Bundle, dir: &Path) -> Result<(Vec<ViewDepth>, Vec<ViewNormal>)> {
    let mut depth = Vec::new();
    let mut normal = Vec::new();
    for i in 0..bundle.views.len() {
        if let (Some(gt), Some(pred)) = (
            &bundle.depths[i],
            read_if_exists(dir.join(format!("depth_{i}.pfm")))?,
        ) {
            let mask: Vec<bool> = gt.data().iter().map(|&d| d > 0.0).collect();
            if mask.contains(&true) {
                depth.push(ViewDepth {
                    view: i,
                    metrics: depth_metrics(&pred, gt, &mask)?,
                });
            }
        }
        if let (Some(gt), Some(pred)) = (
            &bundle.normals[i],
            read_if_exists(dir.join(format!("normal_{i}.pfm")))?,
        ) {
            if !pred.same_shape(gt) {
                return Err(Error::ShapeMismatch(format!(
                    "normal_{i}.pfm does not match the ground-truth map"
                )));
            }
            // f32 storage: renormalize both sides; pixels that are zero on either side are skipped
            let (pred, gt) = (renormalize(&pred), renormalize(gt));
            let mask: Vec<bool> = (0..gt.pixel_count())
                .map(|p| {
                    gt.pixel(p / gt.width(), p % gt.width()) != [0.0; 3]
                        && pred.pixel(p / pred.width(), p % pred.width()) != [0.0; 3]
                })
                .collect();
            if mask.contains(&true) {
                normal.push(ViewNormal {
                    view: i,
                    metrics: normal_metrics(&pred, &gt, &mask)?,
                });
            }
        }
    }
    Ok((depth, normal))
}

fn renormalize(n: &ImageGrid) -> ImageGrid {
    let mut out = n.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let len = (px[0] * px[0] + px[1] * px[1] + px[2] * px[2]).sqrt();
        if len > 0.0 {
            px.iter_mut().for_each(|v| *v /= len);
        }
    }
    out
}

/// Mesh metrics after frustum culling (see [`evaluate_mesh`]), plus depth
/// and normal metrics for every view where both a ground-truth map and a
/// prediction in `--pred-maps` exist.
pub fn cmd_eval(a: &EvalArgs) -> Result<EvalReport, CliError> {
    let pred = read_mesh(&a.pred).stage("load")?;
    let gt = read_mesh(&a.gt).stage("load")?;
    let bundle = load_bundle(&a.cameras).stage("load")?;
    let mesh = evaluate_mesh(&pred, &gt, &bundle.views, a.tau, a.samples, a.seed).stage("eval")?;
    let (depth, normal) = match &a.pred_maps {
        Some(dir) => map_scores(&bundle, dir).stage("eval")?,
        None => (Vec::new(), Vec::new()),
    };
    let report = EvalReport { mesh, depth, normal };
    if let Some(out) = &a.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            create_dir(parent).stage("write")?;
        }
        write_json(out, &report).stage("write")?;
    }
    Ok(report)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> GradcheckReport {
    run_gradcheck(&GradcheckConfig {
        seed: a.seed,
        instances: a.instances,
        image_size: a.image_size,
        splats: a.splats,
        points: a.points,
        sign_flip: None,
    })
}

/// Writes `rgb.png`, `depth.pfm` and camera-frame `normal.pfm` for one camera
/// of the list. Images referenced by the camera file are not read.
pub fn cmd_render(a: &RenderArgs) -> Result<RenderOutput, CliError> {
    let field = read_splats_ply(&a.splats).stage("load")?;
    let file = read_cameras(&a.cameras).stage("load")?;
    let entry = file
        .cameras
        .get(a.view)
        .ok_or_else(|| {
            Error::invalid(
                "view",
                format!("index {} but only {} cameras", a.view, file.cameras.len()),
            )
        })
        .stage("load")?;
    let ctx = |e: Error| match e {
        Error::Invalid { .. } | Error::ShapeMismatch(_) => Error::format(&a.cameras, e.to_string()),
        other => other,
    };
    let k = entry.intrinsics().map_err(ctx).stage("load")?;
    let pose = entry.pose().map_err(ctx).stage("load")?;
    let view = View::camera_only(k, pose, entry.near, entry.far)
        .map_err(ctx)
        .stage("load")?;
    let out = render(&field, &view, &RenderConfig::default());
    create_dir(&a.out).stage("write")?;
    write_png(a.out.join("rgb.png"), &out.rgb).stage("write")?;
    write_pfm(a.out.join("depth.pfm"), &out.depth).stage("write")?;
    write_pfm(a.out.join("normal.pfm"), &out.normal).stage("write")?;
    Ok(out)
}
