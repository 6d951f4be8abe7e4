use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct PhotometricValue {
    /// `w11 * mse + w12 * (1 - ssim)`.
    pub loss: f64,
    pub mse: f64,
    pub ssim: f64,
    /// Gradient of `loss` with respect to the rendered image.
    pub grad: ImageGrid,
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - c;
        *v = (-x * x / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same" filtering with zero padding. The kernel is symmetric, so
/// this operator is its own adjoint.
fn blur(src: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = WINDOW / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Sum of the SSIM map of one channel and the gradient of that sum with
/// respect to `y`.
fn ssim_channel(x: &[f64], y: &[f64], h: usize, w: usize, k: &[f64; WINDOW]) -> (f64, Vec<f64>) {
    let mu_x = blur(x, h, w, k);
    let mu_y = blur(y, h, w, k);
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let e_xx = blur(&sq(x, x), h, w, k);
    let e_yy = blur(&sq(y, y), h, w, k);
    let e_xy = blur(&sq(x, y), h, w, k);
    let n = h * w;
    let (mut a, mut b, mut c) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let var_x = e_xx[i] - mx * mx;
        let var_y = e_yy[i] - my * my;
        let cov = e_xy[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cov + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = var_x + var_y + C2;
        let s = a1 * a2 / (b1 * b2);
        total += s;
        let ds_dmu = 2.0 * mx * a2 / (b1 * b2) - 2.0 * s * my / b1;
        let ds_dvar = -s / b2;
        let ds_dcov = 2.0 * a1 / (b1 * b2);
        // var_y and cov depend on mu_y as well: fold those paths in
        a[i] = ds_dmu - 2.0 * my * ds_dvar - mx * ds_dcov;
        b[i] = ds_dvar;
        c[i] = ds_dcov;
    }
    let (ga, gb, gc) = (blur(&a, h, w, k), blur(&b, h, w, k), blur(&c, h, w, k));
    let grad = (0..n)
        .map(|i| ga[i] + 2.0 * y[i] * gb[i] + x[i] * gc[i])
        .collect();
    (total, grad)
}

fn planes(img: &ImageGrid) -> Vec<Vec<f64>> {
    (0..img.channels()).map(|c| img.channel(c).into_vec()).collect()
}

/// Mean SSIM over pixels and channels with an 11x11 Gaussian window
/// (sigma 1.5, zero padded) and the usual constants for unit data range.
pub fn ssim(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    Ok(ssim_with_grad(a, b)?.0)
}

fn ssim_with_grad(target: &ImageGrid, render: &ImageGrid) -> Result<(f64, ImageGrid)> {
    if !target.same_shape(render) {
        return Err(Error::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            target.height(),
            target.width(),
            target.channels(),
            render.height(),
            render.width(),
            render.channels()
        )));
    }
    let (h, w, ch) = (render.height(), render.width(), render.channels());
    let k = gaussian_window();
    let (xs, ys) = (planes(target), planes(render));
    let per: Vec<(f64, Vec<f64>)> = (0..ch)
        .into_par_iter()
        .map(|c| ssim_channel(&xs[c], &ys[c], h, w, &k))
        .collect();
    let m = (h * w * ch) as f64;
    let mut grad = ImageGrid::zeros(h, w, ch);
    let mut total = 0.0;
    for (c, (s, g)) in per.iter().enumerate() {
        total += s;
        for (i, gv) in g.iter().enumerate() {
            grad.data_mut()[i * ch + c] = gv / m;
        }
    }
    Ok((total / m, grad))
}

/// `w11 * MSE + w12 * (1 - SSIM)` between a target and a rendered image,
/// with the gradient with respect to the rendered image.
pub fn photometric(target: &ImageGrid, render: &ImageGrid, w11: f64, w12: f64) -> Result<PhotometricValue> {
    let (s, mut grad) = ssim_with_grad(target, render)?;
    let m = render.data().len() as f64;
    let mut mse = 0.0;
    for ((g, r), t) in grad.data_mut().iter_mut().zip(render.data()).zip(target.data()) {
        let d = r - t;
        mse += d * d;
        *g = w11 * 2.0 * d / m - w12 * *g;
    }
    mse /= m;
    Ok(PhotometricValue {
        loss: w11 * mse + w12 * (1.0 - s),
        mse,
        ssim: s,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageGrid {
        ImageGrid::from_fn(h, w, c, |_, _, _| rng.random())
    }

    #[test]
    fn identical_images_give_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = random_image(&mut rng, 12, 9, 3);
        let v = photometric(&a, &a, 1.0, 0.1).unwrap();
        assert!(v.loss.abs() < 1e-12);
        assert!(v.grad.data().iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn constant_images_mse() {
        let a = ImageGrid::zeros(8, 8, 3);
        let b = ImageGrid::filled(8, 8, 3, 1.0);
        assert_eq!(photometric(&a, &b, 1.0, 0.0).unwrap().loss, 1.0);
        assert!(ssim(&a, &b).unwrap() < 1e-3);
    }

    #[test]
    fn shape_mismatch() {
        assert!(photometric(&ImageGrid::zeros(4, 4, 3), &ImageGrid::zeros(4, 5, 3), 1.0, 0.1).is_err());
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let k = gaussian_window();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..WINDOW {
            assert_eq!(k[i], k[WINDOW - 1 - i]);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let t = random_image(&mut rng, 16, 16, 3);
            let r = random_image(&mut rng, 16, 16, 3);
            let v = photometric(&t, &r, 1.0, 0.1).unwrap();
            for _ in 0..10 {
                let i = rng.random_range(0..r.data().len());
                let h = 1e-6;
                let mut p = r.clone();
                let mut m = r.clone();
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let fd = (photometric(&t, &p, 1.0, 0.1).unwrap().loss
                    - photometric(&t, &m, 1.0, 0.1).unwrap().loss)
                    / (2.0 * h);
                let a = v.grad.data()[i];
                assert!(
                    (a - fd).abs() <= 1e-4 * a.abs().max(fd.abs()).max(1e-8),
                    "{a} vs {fd}"
                );
            }
        }
    }
}
