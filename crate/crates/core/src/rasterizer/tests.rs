use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gaussian_field::{build_pixel_aligned, PixelAlignedConfig, Splat2D};
use crate::geometry::{CameraIntrinsics, CameraPose, ImageGrid};
use crate::scene::{synthesize, RigConfig, SceneKind, SceneSpec, Texture, TextureKind};

fn small_view(size: usize, focal: f64) -> View {
    let c = (size as f64 - 1.0) / 2.0;
    let k = CameraIntrinsics::new(focal, focal, c, c, size, size).unwrap();
    View::camera_only(k, CameraPose::identity(), 0.1, 100.0).unwrap()
}

fn facing_splat(center: Vector3<f64>, scale: f64, opacity: f64, color: [f64; 3]) -> Splat2D {
    Splat2D {
        mu: center,
        scale: Vector2::new(scale, scale),
        rotation: UnitQuaternion::identity(),
        opacity,
        color: Vector3::from(color),
    }
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> SplatField {
    let splats = (0..n)
        .map(|_| {
            let d = rng.random_range(1.0..6.0);
            let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0);
            Splat2D {
                mu: Vector3::new(
                    rng.random_range(-0.5..0.5) * d,
                    rng.random_range(-0.5..0.5) * d,
                    d,
                ),
                scale: Vector2::new(rng.random_range(0.05..0.4), rng.random_range(0.05..0.4)) * d,
                rotation: UnitQuaternion::from_scaled_axis(axis.normalize() * rng.random_range(0.0..0.8)),
                opacity: rng.random_range(0.1..1.0),
                color: Vector3::new(rng.random(), rng.random(), rng.random()),
            }
        })
        .collect();
    SplatField::from_splats(splats)
}

#[test]
fn single_splat_center_pixel() {
    let view = small_view(9, 10.0);
    let field = SplatField::from_splats(vec![facing_splat(
        Vector3::new(0.0, 0.0, 2.0),
        0.3,
        1.0,
        [0.2, 0.5, 0.9],
    )]);
    let out = render(&field, &view, &RenderConfig::default());
    let rgb = out.rgb.pixel(4, 4);
    // the weight is clipped at 0.999, so the color is scaled by the same factor
    for (a, b) in rgb.iter().zip([0.2, 0.5, 0.9]) {
        assert!((a - b * MAX_WEIGHT).abs() < 1e-12);
        assert!((a - b).abs() < 1e-3);
    }
    assert!((out.depth.get(4, 4, 0) - 2.0).abs() < 1e-12);
    assert_eq!(out.normal.pixel(4, 4), &[0.0, 0.0, -1.0]);
    assert!(out.acc.get(4, 4, 0) >= 0.999 - 1e-12);
}

#[test]
fn opaque_front_splat_occludes() {
    let view = small_view(9, 10.0);
    let front = facing_splat(Vector3::new(0.0, 0.0, 2.0), 5.0, 1.0, [0.9, 0.1, 0.1]);
    let back = facing_splat(Vector3::new(0.0, 0.0, 4.0), 5.0, 1.0, [0.1, 0.9, 0.1]);
    let cfg = RenderConfig::default();
    let alone = render(&SplatField::from_splats(vec![front]), &view, &cfg);
    let both = render(&SplatField::from_splats(vec![back, front]), &view, &cfg);
    // on the axis the back splat sees only the 1e-3 transmittance left by the clipped front weight
    for ch in 0..3 {
        assert!((alone.rgb.get(4, 4, ch) - both.rgb.get(4, 4, ch)).abs() < 1e-3);
    }
    assert!((alone.depth.get(4, 4, 0) - both.depth.get(4, 4, 0)).abs() < 2.0 * 1e-3 + 1e-9);
}

#[test]
fn culling_and_tie_break() {
    let view = small_view(32, 30.0);
    let splats = vec![
        facing_splat(Vector3::new(0.0, 0.0, 3.0), 0.1, 0.5, [0.5; 3]),
        facing_splat(Vector3::new(0.0, 0.0, -3.0), 0.1, 0.5, [0.5; 3]),
        facing_splat(Vector3::new(0.1, 0.0, 3.0), 0.1, 0.5, [0.5; 3]),
        facing_splat(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.5, [0.5; 3]),
        facing_splat(Vector3::new(50.0, 0.0, 2.0), 0.1, 0.5, [0.5; 3]),
    ];
    let field = SplatField::from_splats(splats);
    let bins = cull_and_sort(&field, &view, &RenderConfig::default());
    assert_eq!(bins.order, vec![3, 0, 2]);
    assert!(bins.order.len() <= field.len());
    assert_eq!((bins.tiles_x, bins.tiles_y), (2, 2));
}

#[test]
fn rendering_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let field = random_field(&mut rng, 40);
    let view = small_view(40, 40.0);
    let cfg = RenderConfig::default();
    let a = render(&field, &view, &cfg);
    let mut perm: Vec<usize> = (0..field.len()).collect();
    perm.reverse();
    perm.swap(3, 17);
    let shuffled = SplatField::from_splats(perm.iter().map(|&i| field.splats[i]).collect());
    let b = render(&shuffled, &view, &cfg);
    assert_eq!(a, b);
    // and repeated runs are bitwise identical
    assert_eq!(a, render(&field, &view, &cfg));
}

#[test]
fn acc_bounded_and_monotone_under_insertion() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let view = small_view(24, 24.0);
    let cfg = RenderConfig::default();
    for _ in 0..10 {
        let mut field = random_field(&mut rng, 12);
        let before = render(&field, &view, &cfg);
        assert!(before.acc.data().iter().all(|&a| (0.0..=1.0).contains(&a)));
        field.extend(random_field(&mut rng, 1));
        let after = render(&field, &view, &cfg);
        for (a, b) in before.acc.data().iter().zip(after.acc.data()) {
            assert!(*b >= *a - 1e-12);
        }
        for i in 0..24 * 24 {
            if after.acc.data()[i] > 0.5 {
                let n = &after.normal.data()[3 * i..3 * i + 3];
                assert!(n.iter().map(|v| v * v).sum::<f64>() > 0.0);
            }
        }
    }
}

#[test]
fn pixel_aligned_box_room_rerenders_source_view() {
    let spec = SceneSpec::new(
        SceneKind::BoxRoom,
        [4.0, 3.0, 3.0],
        Texture::new(TextureKind::ValueNoise, 1.5, 2),
    );
    let rig = RigConfig {
        count: 1,
        width: 96,
        height: 96,
        focal: 80.0,
        ..RigConfig::default()
    };
    let scene = synthesize(&spec, &rig).unwrap();
    let (r, view) = (&scene.renders[0], &scene.views[0]);
    let field = build_pixel_aligned(&r.depth, &r.normal, view, 0, &PixelAlignedConfig::default())
        .unwrap()
        .field;
    let out = render(&field, view, &RenderConfig::default());
    let mse = out
        .rgb
        .data()
        .iter()
        .zip(r.image.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / r.image.data().len() as f64;
    let psnr = -10.0 * mse.log10();
    assert!(psnr >= 30.0, "psnr {psnr}");
    let mut rel: Vec<f64> = (0..96 * 96)
        .map(|i| (out.depth.data()[i] - r.depth.data()[i]).abs() / r.depth.data()[i])
        .collect();
    let mean = rel.iter().sum::<f64>() / rel.len() as f64;
    rel.sort_by(f64::total_cmp);
    assert!(mean <= 0.01, "mean relative depth error {mean}");
    assert!(rel[rel.len() / 2] <= 0.01);
}

fn weighted_loss(out: &RenderOutput, up: &RenderUpstream) -> f64 {
    let dot = |a: &ImageGrid, b: &ImageGrid| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.rgb, &up.rgb)
        + dot(&out.depth, &up.depth)
        + dot(&out.normal, &up.normal)
        + dot(&out.acc, &up.acc)
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let field = random_field(&mut rng, 10);
    let view = small_view(16, 16.0);
    let g = render_backward(
        &field,
        &view,
        &RenderConfig::default(),
        &RenderUpstream::zeros(16, 16),
    )
    .unwrap();
    assert!(g.splats.iter().all(SplatGrad::is_zero));
}

#[test]
fn color_gradient_vanishes_at_target() {
    let view = small_view(9, 10.0);
    let field = SplatField::from_splats(vec![facing_splat(
        Vector3::new(0.0, 0.0, 2.0),
        0.4,
        0.9,
        [0.3, 0.6, 0.2],
    )]);
    let cfg = RenderConfig::default();
    let out = render(&field, &view, &cfg);
    // target equal to the render itself: the MSE gradient is 2 (rgb - target) = 0
    let mut up = RenderUpstream::zeros(9, 9);
    for (g, (a, b)) in up
        .rgb
        .data_mut()
        .iter_mut()
        .zip(out.rgb.data().iter().zip(out.rgb.data()))
    {
        *g = 2.0 * (a - b);
    }
    let g = render_backward(&field, &view, &cfg, &up).unwrap();
    assert_eq!(g.splats[0].color, Vector3::zeros());
}

#[test]
fn culled_splats_get_zero_gradient() {
    let view = small_view(9, 10.0);
    let field = SplatField::from_splats(vec![
        facing_splat(Vector3::new(0.0, 0.0, 2.0), 0.4, 0.9, [0.3, 0.6, 0.2]),
        facing_splat(Vector3::new(0.0, 0.0, -2.0), 0.4, 0.9, [0.3, 0.6, 0.2]),
    ]);
    let mut up = RenderUpstream::zeros(9, 9);
    up.rgb.data_mut().fill(1.0);
    up.acc.data_mut().fill(1.0);
    let g = render_backward(&field, &view, &RenderConfig::default(), &up).unwrap();
    assert!(!g.splats[0].is_zero());
    assert!(g.splats[1].is_zero());
}

#[test]
fn backward_matches_finite_differences_on_larger_image() {
    // complements the small-scene gradient suite: several tiles, rotated camera
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let field = random_field(&mut rng, 6);
    let k = CameraIntrinsics::new(30.0, 28.0, 17.0, 15.0, 36, 33).unwrap();
    let pose = CameraPose::new(
        UnitQuaternion::from_euler_angles(0.05, -0.04, 0.1),
        Vector3::new(0.05, -0.02, 0.1),
    );
    let view = View::camera_only(k, pose, 0.1, 100.0).unwrap();
    let cfg = RenderConfig {
        cutoff_sigma: 1e3,
        ..RenderConfig::default()
    };
    let mut up = RenderUpstream::zeros(33, 36);
    for g in [&mut up.rgb, &mut up.depth, &mut up.normal, &mut up.acc] {
        for v in g.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let analytic = render_backward(&field, &view, &cfg, &up).unwrap();
    let loss = |f: &SplatField| weighted_loss(&render(f, &view, &cfg), &up);
    let h = 1e-6;
    for i in 0..field.len() {
        let mut plus = field.clone();
        let mut minus = field.clone();
        plus.splats[i].mu.x += h;
        minus.splats[i].mu.x -= h;
        let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
        let a = analytic.splats[i].mu.x;
        assert!(
            (a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1.0),
            "splat {i}: {a} vs {fd}"
        );
    }
}
