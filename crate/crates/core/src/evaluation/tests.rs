use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn brute(pred: &[Vector3<f64>], gt: &[Vector3<f64>], tau: f64) -> (f64, f64, f64) {
    let nearest = |q: &Vector3<f64>, set: &[Vector3<f64>]| {
        set.iter().map(|p| (p - q).norm()).fold(f64::INFINITY, f64::min)
    };
    let a: Vec<f64> = pred.iter().map(|q| nearest(q, gt)).collect();
    let b: Vec<f64> = gt.iter().map(|q| nearest(q, pred)).collect();
    let cd = 0.5 * (a.iter().sum::<f64>() / a.len() as f64 + b.iter().sum::<f64>() / b.len() as f64);
    let p = a.iter().filter(|&&d| d < tau).count() as f64 / a.len() as f64;
    let r = b.iter().filter(|&&d| d < tau).count() as f64 / b.len() as f64;
    (cd, p, r)
}

fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
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

fn square() -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

#[test]
fn hand_example() {
    let pred = PointCloud::new(vec![Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0)]);
    let gt = PointCloud::new(vec![Vector3::zeros()]);
    let m = mesh_metrics(&pred, &gt, 0.5).unwrap();
    assert_eq!((m.precision, m.recall), (0.5, 1.0));
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert!((m.cd - 0.25).abs() < 1e-15);
    let same = mesh_metrics(&pred, &pred, 0.5).unwrap();
    assert_eq!(
        (same.cd, same.precision, same.recall, same.f1),
        (0.0, 1.0, 1.0, 1.0)
    );
    let wide = mesh_metrics(&pred, &gt, 1e9).unwrap();
    assert_eq!((wide.precision, wide.recall), (1.0, 1.0));
}

#[test]
fn matches_brute_force_and_swaps() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (na, nb) = (rng.random_range(1..200), rng.random_range(1..200));
        let a = cloud(&mut rng, na);
        let b = cloud(&mut rng, nb);
        let tau = rng.random_range(0.05..0.5);
        let m = mesh_metrics(&PointCloud::new(a.clone()), &PointCloud::new(b.clone()), tau).unwrap();
        let (cd, p, r) = brute(&a, &b, tau);
        assert!((m.cd - cd).abs() < 1e-9);
        assert_eq!((m.precision, m.recall), (p, r));
        let s = mesh_metrics(&PointCloud::new(b), &PointCloud::new(a), tau).unwrap();
        assert_eq!((s.precision, s.recall), (m.recall, m.precision));
        assert!((s.cd - m.cd).abs() < 1e-12);
    }
}

#[test]
fn rejects_empty_and_bad_tau() {
    let a = PointCloud::new(vec![Vector3::zeros()]);
    assert!(matches!(
        mesh_metrics(&PointCloud::default(), &a, 0.1),
        Err(Error::EmptyCloud)
    ));
    assert!(mesh_metrics(&a, &a, 0.0).is_err());
    assert!(matches!(
        sample_mesh(&TriangleMesh::default(), 10, 0),
        Err(Error::EmptyMesh)
    ));
}

#[test]
fn square_samples_are_centered() {
    let pts = sample_mesh(&square(), 10_000, 3).unwrap();
    let c = pts.points.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    assert!((c.x - 0.5).abs() < 0.02 && (c.y - 0.5).abs() < 0.02);
    assert_eq!(pts, sample_mesh(&square(), 10_000, 3).unwrap());
    assert_ne!(pts, sample_mesh(&square(), 10_000, 4).unwrap());
}

#[test]
fn samples_stay_in_the_triangle() {
    let mesh = TriangleMesh::new(
        vec![
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(2.0, 0.0, 1.0),
            Vector3::new(0.0, 1.0, 1.0),
        ],
        vec![[0, 1, 2]],
    )
    .unwrap();
    for p in sample_mesh(&mesh, 2000, 0).unwrap().points {
        assert!(p.x >= 0.0 && p.y >= 0.0 && p.x / 2.0 + p.y <= 1.0 + 1e-12 && (p.z - 1.0).abs() < 1e-15);
    }
}

#[test]
fn depth_examples() {
    let gt = ImageGrid::filled(4, 4, 1, 3.0);
    let mask = vec![true; 16];
    let same = depth_metrics(&gt, &gt, &mask).unwrap();
    assert_eq!((same.abs_rel, same.abs_diff), (0.0, 0.0));
    let double = ImageGrid::filled(4, 4, 1, 6.0);
    let m = depth_metrics(&double, &gt, &mask).unwrap();
    assert_eq!((m.abs_rel, m.abs_diff), (1.0, 3.0));
    assert!(matches!(
        depth_metrics(&gt, &gt, &[false; 16]),
        Err(Error::EmptyMask)
    ));
    let zero = ImageGrid::zeros(4, 4, 1);
    assert!(depth_metrics(&gt, &zero, &mask).is_err());
}

#[test]
fn depth_matches_masked_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let pred = ImageGrid::from_fn(6, 7, 1, |_, _, _| rng.random_range(0.5..4.0));
        let gt = ImageGrid::from_fn(6, 7, 1, |_, _, _| rng.random_range(0.5..4.0));
        let mut mask: Vec<bool> = (0..42).map(|_| rng.random_bool(0.5)).collect();
        mask[0] = true;
        let m = depth_metrics(&pred, &gt, &mask).unwrap();
        let idx: Vec<usize> = (0..42).filter(|&i| mask[i]).collect();
        let rel = idx
            .iter()
            .map(|&i| (pred.data()[i] - gt.data()[i]).abs() / gt.data()[i])
            .sum::<f64>()
            / idx.len() as f64;
        let abs = idx
            .iter()
            .map(|&i| (pred.data()[i] - gt.data()[i]).abs())
            .sum::<f64>()
            / idx.len() as f64;
        assert!((m.abs_rel - rel).abs() < 1e-9 && (m.abs_diff - abs).abs() < 1e-9);
        assert_eq!(m.pixels, idx.len());
    }
}

#[test]
fn normal_examples() {
    let up = ImageGrid::from_fn(2, 2, 3, |_, _, c| [0.0, 0.0, 1.0][c]);
    let down = ImageGrid::from_fn(2, 2, 3, |_, _, c| [0.0, 0.0, -1.0][c]);
    let mask = vec![true; 4];
    let same = normal_metrics(&up, &up, &mask).unwrap();
    assert_eq!((same.mean_deg, same.frac_lt30), (0.0, 1.0));
    let flip = normal_metrics(&down, &up, &mask).unwrap();
    assert_eq!((flip.mean_deg, flip.frac_lt30), (180.0, 0.0));
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let half = ImageGrid::from_fn(2, 2, 3, |r, _, c| {
        if r == 0 {
            [0.0, 0.0, 1.0][c]
        } else {
            [h, 0.0, h][c]
        }
    });
    let m = normal_metrics(&half, &up, &mask).unwrap();
    assert!((m.mean_deg - 22.5).abs() < 1e-9);
    assert_eq!(m.frac_lt30, 0.5);
    let scaled = ImageGrid::filled(2, 2, 3, 1.0);
    assert!(matches!(
        normal_metrics(&scaled, &up, &mask),
        Err(Error::NonUnitNormal(_))
    ));
}

proptest! {
    #[test]
    fn rigid_invariance(seed in 0u64..1000, ax in -3.0f64..3.0, ay in -3.0f64..3.0, t in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = cloud(&mut rng, 60);
        let b = cloud(&mut rng, 80);
        let rot = Rotation3::from_euler_angles(ax, ay, 0.3);
        let shift = Vector3::new(t, -t, 0.5 * t);
        let move_all = |c: &[Vector3<f64>]| PointCloud::new(c.iter().map(|p| rot * p + shift).collect());
        let m0 = mesh_metrics(&PointCloud::new(a.clone()), &PointCloud::new(b.clone()), 0.2).unwrap();
        let m1 = mesh_metrics(&move_all(&a), &move_all(&b), 0.2).unwrap();
        prop_assert!((m0.cd - m1.cd).abs() < 1e-9);
        // a distance sitting within rounding of tau could flip; the random clouds make that vanishingly rare
        prop_assert_eq!((m0.precision, m0.recall), (m1.precision, m1.recall));
    }

    #[test]
    fn f1_is_harmonic_mean(seed in 0u64..1000, tau in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = PointCloud::new(cloud(&mut rng, 40));
        let b = PointCloud::new(cloud(&mut rng, 30));
        let m = mesh_metrics(&a, &b, tau).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.precision) && (0.0..=1.0).contains(&m.recall));
        let expect = if m.precision + m.recall > 0.0 { 2.0 * m.precision * m.recall / (m.precision + m.recall) } else { 0.0 };
        prop_assert!((m.f1 - expect).abs() < 1e-15);
    }
}

#[test]
fn evaluate_mesh_culls_and_reports_empty() {
    use crate::geometry::{CameraIntrinsics, CameraPose};
    let k = CameraIntrinsics::new(20.0, 20.0, 9.5, 9.5, 20, 20).unwrap();
    let view = |z: f64| {
        View::camera_only(
            k,
            CameraPose::new(Default::default(), Vector3::new(-0.5, -0.5, z)),
            0.5,
            10.0,
        )
        .unwrap()
    };
    let plane = square();
    let m = evaluate_mesh(&plane, &plane, &[view(2.0)], 0.05, 2000, 0).unwrap();
    assert!(m.cd < 0.02 && m.f1 == 1.0, "{m:?}");
    assert!(matches!(
        evaluate_mesh(&plane, &plane, &[view(-3.0)], 0.05, 100, 0),
        Err(Error::EmptyAfterCull("ground truth"))
    ));
}
