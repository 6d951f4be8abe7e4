use nalgebra::Vector3;

use crate::error::{Error, Result};

/// The arccos argument is clamped to `[-1 + ANGLE_CLAMP, 1 - ANGLE_CLAMP]`.
pub const ANGLE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngmfValue {
    pub loss: f64,
    /// Gradient with respect to `n`, projected onto the tangent plane at `n`.
    pub grad_n: Vector3<f64>,
    pub grad_kappa: f64,
}

/// Negative log-likelihood of the angular von Mises-Fisher density:
/// `-ln(k^2 + 1) + ln(1 + exp(-k pi)) + k acos(n . n_hat)`.
pub fn angmf_nll(n: &Vector3<f64>, kappa: f64, n_hat: &Vector3<f64>) -> Result<AngmfValue> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::NonPositiveKappa(kappa));
    }
    let raw = n.dot(n_hat);
    let lim = 1.0 - ANGLE_CLAMP;
    let cos = raw.clamp(-lim, lim);
    let theta = cos.acos();
    let e = (-kappa * std::f64::consts::PI).exp();
    let loss = -(kappa * kappa).ln_1p() + e.ln_1p() + kappa * theta;
    let grad_kappa = -2.0 * kappa / (kappa * kappa + 1.0) - std::f64::consts::PI * e / (1.0 + e) + theta;
    let grad_n = if raw.abs() < lim {
        // d theta / d cos = -1 / sin(theta)
        let g = n_hat * (-kappa / (1.0 - cos * cos).sqrt());
        g - n * n.dot(&g)
    } else {
        Vector3::zeros()
    };
    Ok(AngmfValue {
        loss,
        grad_n,
        grad_kappa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn aligned_unit_concentration() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        let v = angmf_nll(&n, 1.0, &n).unwrap();
        let expect = -(2f64.ln()) + (-std::f64::consts::PI).exp().ln_1p() + (ANGLE_CLAMP * 2.0).sqrt();
        // the clamp leaves theta = acos(1 - 1e-7) ~ 4.5e-4 rad
        assert!((v.loss - expect).abs() < 1e-9);
        assert!((v.loss - (-0.6508)).abs() < 1e-3);
    }

    #[test]
    fn small_kappa_limit_is_ln2() {
        let a = Vector3::new(1.0, 0.0, 0.0);
        let b = Vector3::new(0.0, 1.0, 0.0);
        let v = angmf_nll(&a, 1e-12, &b).unwrap();
        assert!((v.loss - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn increasing_in_angle() {
        let n_hat = Vector3::z();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=180 {
            let t = (i as f64).to_radians();
            let n = Vector3::new(t.sin(), 0.0, t.cos());
            let l = angmf_nll(&n, 2.5, &n_hat).unwrap().loss;
            if i > 0 {
                assert!(l > prev);
            }
            prev = l;
        }
    }

    #[test]
    fn rotation_invariant() {
        let r = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let n = Vector3::new(0.2, 0.3, 0.9).normalize();
        let h = Vector3::new(-0.5, 0.1, 0.8).normalize();
        let a = angmf_nll(&n, 3.0, &h).unwrap().loss;
        let b = angmf_nll(&(r * n), 3.0, &(r * h)).unwrap().loss;
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_kappa() {
        assert!(angmf_nll(&Vector3::z(), 0.0, &Vector3::z()).is_err());
        assert!(angmf_nll(&Vector3::z(), -1.0, &Vector3::z()).is_err());
    }
}
