use serde::{Deserialize, Serialize};

/// Adam hyperparameters shared by all parameter classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates of one parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken.
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, hp: &AdamParams) {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    state.t += 1;
    let c1 = 1.0 - hp.beta1.powi(state.t as i32);
    let c2 = 1.0 - hp.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * g;
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vec![1.0, -2.0];
        let mut s = AdamState {
            m: vec![0.5, 0.5],
            v: vec![0.25, 0.25],
            t: 3,
        };
        adam_step(&mut p, &[0.0, 0.0], &mut s, 0.1, &AdamParams::default());
        assert_eq!(s.m, vec![0.45, 0.45]);
        assert!(s.v[0] < 0.25);
        // the moments are non-zero so parameters still move; with fresh state they do not
        let mut q = vec![1.0, -2.0];
        adam_step(
            &mut q,
            &[0.0, 0.0],
            &mut AdamState::new(2),
            0.1,
            &AdamParams::default(),
        );
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient() {
        let mut p = vec![0.0, 0.0, 0.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.02, 1e-3], &mut s, 0.01, &AdamParams::default());
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-8);
        assert!((p[2] + 0.01).abs() < 1e-6);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = vec![0.3, 0.1];
            let mut s = AdamState::new(2);
            for k in 0..10 {
                adam_step(
                    &mut p,
                    &[k as f64 * 0.1, -0.2],
                    &mut s,
                    0.05,
                    &AdamParams::default(),
                );
            }
            p
        };
        assert_eq!(run(), run());
    }
}
