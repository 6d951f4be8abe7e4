//! Central finite-difference verification of every analytic gradient.

use std::fmt;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::gaussian_field::{Splat2D, SplatField};
use crate::geometry::{quat_to_wxyz, wxyz_to_quat, CameraIntrinsics, CameraPose, ImageGrid, View};
use crate::losses::{angmf_nll, chamfer, photometric, weighted_chamfer, PointCloud};
use crate::rasterizer::{render, render_backward, RenderConfig, RenderOutput, RenderUpstream};

/// Maximum relative error accepted by [`GradcheckReport::passed`].
pub const TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, so that gradients that are zero
/// up to round-off do not report huge relative errors.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum GradClass {
    Mean,
    Scale,
    Rotation,
    Opacity,
    Color,
    Chamfer,
    WeightedChamfer,
    AngmfNormal,
    AngmfKappa,
    Photometric,
}

impl GradClass {
    pub const ALL: [GradClass; 10] = [
        GradClass::Mean,
        GradClass::Scale,
        GradClass::Rotation,
        GradClass::Opacity,
        GradClass::Color,
        GradClass::Chamfer,
        GradClass::WeightedChamfer,
        GradClass::AngmfNormal,
        GradClass::AngmfKappa,
        GradClass::Photometric,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradClass::Mean => "rasterizer.mu",
            GradClass::Scale => "rasterizer.scale",
            GradClass::Rotation => "rasterizer.rotation",
            GradClass::Opacity => "rasterizer.opacity",
            GradClass::Color => "rasterizer.color",
            GradClass::Chamfer => "chamfer.points",
            GradClass::WeightedChamfer => "weighted_chamfer.points",
            GradClass::AngmfNormal => "angmf_nll.normal",
            GradClass::AngmfKappa => "angmf_nll.kappa",
            GradClass::Photometric => "photometric.image",
        }
    }
}

impl fmt::Display for GradClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random instances per class.
    pub instances: usize,
    /// Square image side for rasterizer and photometric instances.
    pub image_size: usize,
    pub splats: usize,
    /// Points per cloud for the Chamfer instances.
    pub points: usize,
    /// Negates the analytic gradient of one class (mutation check).
    pub sign_flip: Option<GradClass>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            image_size: 8,
            splats: 5,
            points: 24,
            sign_flip: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassResult {
    pub class: GradClass,
    pub instances: usize,
    pub checked: usize,
    pub worst_rel_error: f64,
}

impl ClassResult {
    pub fn passed(&self) -> bool {
        self.worst_rel_error <= TOLERANCE
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub classes: Vec<ClassResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.classes.iter().all(ClassResult::passed)
    }

    pub fn failures(&self) -> Vec<GradClass> {
        self.classes
            .iter()
            .filter(|c| !c.passed())
            .map(|c| c.class)
            .collect()
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn step(x: f64) -> f64 {
    1e-5 * x.abs().max(1.0)
}

/// Central difference of `f` along one coordinate whose current value is `x`;
/// `perturbed(v)` builds the input with that coordinate set to `v`.
fn central<T>(x: f64, mut perturbed: impl FnMut(f64) -> T, mut f: impl FnMut(&T) -> f64) -> f64 {
    let h = step(x);
    let plus = f(&perturbed(x + h));
    let minus = f(&perturbed(x - h));
    (plus - minus) / (2.0 * h)
}

#[derive(Default)]
struct Tally {
    worst: f64,
    checked: usize,
}

impl Tally {
    fn add(&mut self, analytic: f64, numeric: f64) {
        self.worst = self.worst.max(rel_error(analytic, numeric));
        self.checked += 1;
    }
}

fn instance_rng(seed: u64, class: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((class as u64) << 32 | instance as u64);
    rng
}

/// Runs every class over `cfg.instances` random instances.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> GradcheckReport {
    let flip = |c: GradClass| if cfg.sign_flip == Some(c) { -1.0 } else { 1.0 };
    let mut tallies: Vec<(GradClass, Tally)> =
        GradClass::ALL.iter().map(|&c| (c, Tally::default())).collect();
    let per_instance: Vec<Vec<(GradClass, Tally)>> = (0..cfg.instances)
        .into_par_iter()
        .map(|i| {
            let mut out = rasterizer_instance(cfg, i, &flip);
            out.extend(chamfer_instance(cfg, i, &flip));
            out.extend(angmf_instance(cfg, i, &flip));
            out.push(photometric_instance(cfg, i, &flip));
            out
        })
        .collect();
    for inst in per_instance {
        for (class, t) in inst {
            let slot = &mut tallies
                .iter_mut()
                .find(|(c, _)| *c == class)
                .expect("known class")
                .1;
            slot.worst = slot.worst.max(t.worst);
            slot.checked += t.checked;
        }
    }
    GradcheckReport {
        classes: tallies
            .into_iter()
            .map(|(class, t)| ClassResult {
                class,
                instances: cfg.instances,
                checked: t.checked,
                worst_rel_error: t.worst,
            })
            .collect(),
    }
}

/// Small random scene: splats at well separated depths (so the blending
/// order is stable under perturbation), tilted at most ~30 degrees from the
/// camera, opacities below the weight clip and a Gaussian cutoff wide enough
/// that no splat boundary falls on a pixel.
fn random_scene(rng: &mut ChaCha8Rng, size: usize, count: usize) -> (SplatField, View, RenderConfig) {
    let f = size as f64;
    let c = (f - 1.0) / 2.0;
    let k = CameraIntrinsics::new(f, f * 1.05, c + 0.2, c - 0.1, size, size).expect("valid intrinsics");
    let pose = CameraPose::new(
        UnitQuaternion::from_euler_angles(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.3..0.3),
        ),
        Vector3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
        ),
    );
    let view = View::camera_only(k, pose, 0.1, 100.0).expect("valid view");
    let mut depths: Vec<f64> = (0..count)
        .map(|j| 2.0 + 0.6 * j as f64 + rng.random_range(0.0..0.2))
        .collect();
    // shuffle so blending order differs from index order
    for j in (1..depths.len()).rev() {
        depths.swap(j, rng.random_range(0..=j));
    }
    let splats = depths
        .iter()
        .map(|&d| {
            let cam = Vector3::new(
                rng.random_range(-0.3..0.3) * d,
                rng.random_range(-0.3..0.3) * d,
                d,
            );
            let axis =
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0).normalize();
            let tilt = UnitQuaternion::from_scaled_axis(axis * rng.random_range(0.0..0.5));
            let spin = UnitQuaternion::from_scaled_axis(Vector3::z() * rng.random_range(-3.0..3.0));
            let cam_rot = tilt * spin;
            Splat2D {
                mu: pose.to_world(&cam),
                scale: Vector2::new(rng.random_range(0.1..0.3), rng.random_range(0.1..0.3)) * d,
                rotation: pose.rotation.inverse() * cam_rot,
                opacity: rng.random_range(0.05..0.8),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
            }
        })
        .collect();
    let cfg = RenderConfig {
        cutoff_sigma: 1e3,
        ..RenderConfig::default()
    };
    (SplatField::from_splats(splats), view, cfg)
}

fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageGrid {
    ImageGrid::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0))
}

fn contract(out: &RenderOutput, up: &RenderUpstream) -> f64 {
    let dot = |a: &ImageGrid, b: &ImageGrid| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.rgb, &up.rgb)
        + dot(&out.depth, &up.depth)
        + dot(&out.normal, &up.normal)
        + dot(&out.acc, &up.acc)
}

fn rasterizer_instance(
    cfg: &GradcheckConfig,
    i: usize,
    flip: &dyn Fn(GradClass) -> f64,
) -> Vec<(GradClass, Tally)> {
    let mut rng = instance_rng(cfg.seed, 0, i);
    let (field, view, rcfg) = random_scene(&mut rng, cfg.image_size, cfg.splats);
    let s = cfg.image_size;
    let up = RenderUpstream {
        rgb: random_grid(&mut rng, s, s, 3),
        depth: random_grid(&mut rng, s, s, 1),
        normal: random_grid(&mut rng, s, s, 3),
        acc: random_grid(&mut rng, s, s, 1),
    };
    let grads = render_backward(&field, &view, &rcfg, &up).expect("upstream shapes match");
    let loss = |f: &SplatField| contract(&render(f, &view, &rcfg), &up);
    let mut t: Vec<(GradClass, Tally)> = [
        GradClass::Mean,
        GradClass::Scale,
        GradClass::Rotation,
        GradClass::Opacity,
        GradClass::Color,
    ]
    .iter()
    .map(|&c| (c, Tally::default()))
    .collect();
    for (j, g) in grads.splats.iter().enumerate() {
        let base = field.splats[j];
        let with = |edit: &dyn Fn(&mut Splat2D)| {
            let mut f = field.clone();
            edit(&mut f.splats[j]);
            f
        };
        for a in 0..3 {
            let fd = central(base.mu[a], |x| with(&|s| s.mu[a] = x), loss);
            t[0].1.add(flip(GradClass::Mean) * g.mu[a], fd);
            let fd = central(base.color[a], |x| with(&|s| s.color[a] = x), loss);
            t[4].1.add(flip(GradClass::Color) * g.color[a], fd);
        }
        for a in 0..2 {
            let fd = central(base.scale[a], |x| with(&|s| s.scale[a] = x), loss);
            t[1].1.add(flip(GradClass::Scale) * g.scale[a], fd);
        }
        let q = quat_to_wxyz(&base.rotation);
        for a in 0..4 {
            let fd = central(
                q[a],
                |x| {
                    let mut p = q;
                    p[a] = x;
                    with(&|s| s.rotation = wxyz_to_quat(&p))
                },
                loss,
            );
            t[2].1.add(flip(GradClass::Rotation) * g.rotation[a], fd);
        }
        let fd = central(base.opacity, |x| with(&|s| s.opacity = x), loss);
        t[3].1.add(flip(GradClass::Opacity) * g.opacity, fd);
    }
    t
}

fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|_| {
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            )
        })
        .collect()
}

fn chamfer_instance(
    cfg: &GradcheckConfig,
    i: usize,
    flip: &dyn Fn(GradClass) -> f64,
) -> Vec<(GradClass, Tally)> {
    let mut rng = instance_rng(cfg.seed, 1, i);
    let a = random_points(&mut rng, cfg.points);
    let b = random_points(&mut rng, cfg.points + 7);
    let wa: Vec<f64> = (0..a.len()).map(|_| rng.random()).collect();
    let wb: Vec<f64> = (0..b.len()).map(|_| rng.random()).collect();
    let mut out = Vec::new();
    for (class, weighted) in [(GradClass::Chamfer, false), (GradClass::WeightedChamfer, true)] {
        let make = |pa: &[Vector3<f64>], pb: &[Vector3<f64>]| {
            if weighted {
                (
                    PointCloud::with_weights(pa.to_vec(), wa.clone()).expect("aligned"),
                    PointCloud::with_weights(pb.to_vec(), wb.clone()).expect("aligned"),
                )
            } else {
                (PointCloud::new(pa.to_vec()), PointCloud::new(pb.to_vec()))
            }
        };
        let eval = |(ca, cb): &(PointCloud, PointCloud)| {
            if weighted {
                weighted_chamfer(ca, cb).expect("valid clouds").value
            } else {
                chamfer(ca, cb).expect("valid clouds").value
            }
        };
        let g = if weighted {
            let (ca, cb) = make(&a, &b);
            weighted_chamfer(&ca, &cb).expect("valid clouds")
        } else {
            let (ca, cb) = make(&a, &b);
            chamfer(&ca, &cb).expect("valid clouds")
        };
        let mut t = Tally::default();
        for (side, pts) in [(0, &a), (1, &b)] {
            for p in 0..pts.len() {
                for ax in 0..3 {
                    let fd = central(
                        pts[p][ax],
                        |x| {
                            let mut moved = pts.clone();
                            moved[p][ax] = x;
                            if side == 0 {
                                make(&moved, &b)
                            } else {
                                make(&a, &moved)
                            }
                        },
                        eval,
                    );
                    let an = if side == 0 {
                        g.grad_a[p][ax]
                    } else {
                        g.grad_b[p][ax]
                    };
                    t.add(flip(class) * an, fd);
                }
            }
        }
        out.push((class, t));
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

fn angmf_instance(
    cfg: &GradcheckConfig,
    i: usize,
    flip: &dyn Fn(GradClass) -> f64,
) -> Vec<(GradClass, Tally)> {
    let mut rng = instance_rng(cfg.seed, 2, i);
    let (mut tn, mut tk) = (Tally::default(), Tally::default());
    for _ in 0..8 {
        let n = random_unit(&mut rng);
        let n_hat = random_unit(&mut rng);
        if n.dot(&n_hat).abs() > 0.999 {
            continue;
        }
        let kappa = rng.random_range(0.1..5.0);
        let v = angmf_nll(&n, kappa, &n_hat).expect("positive kappa");
        for ax in 0..3 {
            let fd = central(
                n[ax],
                |x| {
                    let mut m = n;
                    m[ax] = x;
                    m.normalize()
                },
                |m| angmf_nll(m, kappa, &n_hat).expect("positive kappa").loss,
            );
            tn.add(flip(GradClass::AngmfNormal) * v.grad_n[ax], fd);
        }
        let fd = central(
            kappa,
            |x| x,
            |k| angmf_nll(&n, *k, &n_hat).expect("positive kappa").loss,
        );
        tk.add(flip(GradClass::AngmfKappa) * v.grad_kappa, fd);
    }
    vec![(GradClass::AngmfNormal, tn), (GradClass::AngmfKappa, tk)]
}

fn photometric_instance(
    cfg: &GradcheckConfig,
    i: usize,
    flip: &dyn Fn(GradClass) -> f64,
) -> (GradClass, Tally) {
    let mut rng = instance_rng(cfg.seed, 3, i);
    let s = 2 * cfg.image_size;
    let target = ImageGrid::from_fn(s, s, 3, |_, _, _| rng.random());
    let rendered = ImageGrid::from_fn(s, s, 3, |_, _, _| rng.random());
    let (w11, w12) = if i % 2 == 0 { (1.0, 0.1) } else { (0.0, 1.0) };
    let g = photometric(&target, &rendered, w11, w12).expect("same shape");
    let mut t = Tally::default();
    for _ in 0..24 {
        let k = rng.random_range(0..rendered.data().len());
        let fd = central(
            rendered.data()[k],
            |x| {
                let mut r = rendered.clone();
                r.data_mut()[k] = x;
                r
            },
            |r| photometric(&target, r, w11, w12).expect("same shape").loss,
        );
        t.add(flip(GradClass::Photometric) * g.grad.data()[k], fd);
    }
    (GradClass::Photometric, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_and_is_deterministic() {
        let cfg = GradcheckConfig {
            instances: 4,
            ..GradcheckConfig::default()
        };
        let a = run_gradcheck(&cfg);
        for c in &a.classes {
            assert!(c.passed(), "{} worst {}", c.class, c.worst_rel_error);
            assert!(c.checked > 0);
        }
        assert_eq!(a, run_gradcheck(&cfg));
    }

    #[test]
    fn sign_flip_is_detected() {
        for class in [
            GradClass::Rotation,
            GradClass::WeightedChamfer,
            GradClass::Photometric,
        ] {
            let cfg = GradcheckConfig {
                instances: 2,
                sign_flip: Some(class),
                ..GradcheckConfig::default()
            };
            assert_eq!(run_gradcheck(&cfg).failures(), vec![class]);
        }
    }
}
