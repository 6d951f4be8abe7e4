use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::raycast::OracleRender;
use crate::error::{Error, Result};

/// Stand-in for a monocular normal estimator: rotates every valid normal by
/// an angle drawn from `|N(0, sigma_deg)|` about a random tangent axis.
///
/// Each pixel draws from its own ChaCha stream so results do not depend on
/// evaluation order.
pub fn perturb_normals(render: &OracleRender, sigma_deg: f64, seed: u64) -> Result<OracleRender> {
    if !(sigma_deg >= 0.0 && sigma_deg.is_finite()) {
        return Err(Error::invalid(
            "sigma_deg",
            format!("must be >= 0, got {sigma_deg}"),
        ));
    }
    let mut out = render.clone();
    if sigma_deg == 0.0 {
        return Ok(out);
    }
    let dist = Normal::new(0.0, sigma_deg.to_radians()).expect("finite sigma");
    let normals = out.normal.data_mut();
    for (i, d) in render.depth.data().iter().enumerate() {
        if *d <= 0.0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let angle: f64 = dist.sample(&mut rng).abs();
        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let n = Vector3::new(normals[3 * i], normals[3 * i + 1], normals[3 * i + 2]);
        let (t1, t2) = tangent_basis(&n);
        let axis = t1 * phi.cos() + t2 * phi.sin();
        // axis is orthogonal to n, so Rodrigues reduces to two terms
        let m = (n * angle.cos() + axis.cross(&n) * angle.sin()).normalize();
        normals[3 * i..3 * i + 3].copy_from_slice(m.as_slice());
    }
    Ok(out)
}

fn tangent_basis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let t1 = n.cross(&helper).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ImageGrid;

    fn tilted_render(n: usize) -> OracleRender {
        let normal = ImageGrid::from_fn(n, n, 3, |r, c, ch| {
            let v = Vector3::new(
                0.3 * (r as f64 / n as f64 - 0.5),
                0.2 * (c as f64 / n as f64),
                -1.0,
            )
            .normalize();
            v[ch]
        });
        OracleRender {
            image: ImageGrid::zeros(n, n, 3),
            depth: ImageGrid::from_fn(n, n, 1, |r, c, _| if (r + c) % 17 == 0 { 0.0 } else { 2.0 }),
            normal,
        }
    }

    fn angle(a: &[f64], b: &[f64]) -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d.clamp(-1.0, 1.0).acos().to_degrees()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let r = tilted_render(16);
        assert_eq!(perturb_normals(&r, 0.0, 3).unwrap(), r);
    }

    #[test]
    fn five_degree_noise_statistics() {
        let r = tilted_render(128);
        let p = perturb_normals(&r, 5.0, 11).unwrap();
        let (mut sum, mut count) = (0.0, 0usize);
        for i in 0..r.depth.pixel_count() {
            let a = &p.normal.data()[3 * i..3 * i + 3];
            let len = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((len - 1.0).abs() < 1e-6);
            if r.depth.data()[i] > 0.0 {
                sum += angle(a, &r.normal.data()[3 * i..3 * i + 3]);
                count += 1;
            } else {
                assert_eq!(a, &r.normal.data()[3 * i..3 * i + 3]);
            }
        }
        assert!(count >= 10_000);
        let mean = sum / count as f64;
        // folded normal mean is sigma * sqrt(2 / pi) ~ 3.99 deg
        assert!((3.0..=7.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn seeded_and_reproducible() {
        let r = tilted_render(24);
        assert_eq!(
            perturb_normals(&r, 3.0, 5).unwrap(),
            perturb_normals(&r, 3.0, 5).unwrap()
        );
        assert_ne!(
            perturb_normals(&r, 3.0, 5).unwrap(),
            perturb_normals(&r, 3.0, 6).unwrap()
        );
    }

    #[test]
    fn rejects_negative_sigma() {
        assert!(perturb_normals(&tilted_render(4), -1.0, 0).is_err());
    }
}
