use crate::error::{Error, Result};
use crate::surrogate::NetworkParams;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self { m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn for_params(params: &NetworkParams) -> Self {
        Self::new(params.data.len())
    }
}

/// One bias-corrected ADAM update. Fails without touching anything if a
/// gradient is not finite.
pub fn adam_step(params: &mut NetworkParams, grads: &NetworkParams, state: &mut OptimizerState, lr: f64) -> Result<()> {
    let n = params.data.len();
    if grads.data.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::ShapeMismatch { expected: n, actual: grads.data.len() });
    }
    if let Some(i) = grads.data.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of parameter {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for i in 0..n {
        let g = grads.data[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params.data[i] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::Architecture;

    fn scalar(x: f64) -> NetworkParams {
        // one-parameter stand-in: only the length matters to the optimizer
        NetworkParams { arch: Architecture::LENET, data: vec![x] }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = NetworkParams::zeros(Architecture::LENET).unwrap();
        let mut g = p.clone();
        for (i, v) in g.data.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 3.0 } else { -0.02 };
        }
        let mut s = OptimizerState::for_params(&p);
        adam_step(&mut p, &g, &mut s, 1e-4).unwrap();
        for (i, v) in p.data.iter().enumerate() {
            let want = if i % 2 == 0 { -1e-4 } else { 1e-4 };
            assert!((v - want).abs() < 1e-9, "{i}: {v}");
        }
        assert_eq!(s.step, 1);
    }

    #[test]
    fn zero_gradient_from_rest() {
        let mut p = scalar(0.7);
        let mut s = OptimizerState::new(1);
        adam_step(&mut p, &scalar(0.0), &mut s, 0.1).unwrap();
        assert_eq!(p.data[0], 0.7);
        s.m[0] = 1.0;
        s.v[0] = 1.0;
        let mut q = scalar(0.7);
        adam_step(&mut q, &scalar(0.0), &mut s, 0.0).unwrap();
        assert_eq!(s.m[0], 0.9);
        assert_eq!(s.v[0], 0.999);
    }

    #[test]
    fn three_steps_by_hand() {
        // g = 1, 2, -1 with lr = 0.1 from x = 0
        let mut p = scalar(0.0);
        let mut s = OptimizerState::new(1);
        let mut x = 0.0;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in [1.0f64, 2.0, -1.0].into_iter().enumerate() {
            adam_step(&mut p, &scalar(g), &mut s, 0.1).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let k = t as i32 + 1;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(k))) / ((v / (1.0 - 0.999f64.powi(k))).sqrt() + 1e-8);
        }
        // closed-form values of the three updates
        // step 1: m̂ = 1, v̂ = 1 -> -0.1
        // step 2: m = 0.29, v = 0.004999, m̂ = 0.29/0.19, v̂ = 0.004999/0.001999
        let m2 = 0.29 / 0.19;
        let v2 = 0.004999 / (1.0 - 0.999f64 * 0.999);
        let step2 = 0.1 * m2 / (v2.sqrt() + 1e-8);
        assert!((p.data[0] - x).abs() < 1e-15);
        let after_two = -0.1 / (1.0 + 1e-8) - step2;
        let m3 = 0.9 * 0.29 - 0.1;
        let v3 = 0.999 * 0.004999 + 0.001;
        let step3 = 0.1 * (m3 / (1.0 - 0.729)) / ((v3 / (1.0 - 0.999f64.powi(3))).sqrt() + 1e-8);
        assert!((p.data[0] - (after_two - step3)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = scalar(1.0);
        let mut s = OptimizerState::new(1);
        assert!(adam_step(&mut p, &scalar(f64::NAN), &mut s, 0.1).is_err());
        assert_eq!(p.data[0], 1.0);
        assert_eq!(s.step, 0);
    }
}
