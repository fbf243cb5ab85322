//! Adam optimizer over flat parameter vectors.
//!
//! Standard bias-corrected Adam. The simulator runs it with `beta1 = 0`, in
//! which case the first moment is just the current gradient and the update
//! direction is the sign-like `g / (sqrt(v_hat) + eps)`.

use crate::{Error, Result};

/// Numerical floor in the denominator.
pub const ADAM_EPS: f64 = 1e-8;

/// Step size and moment decay rates.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl AdamParams {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Config(format!("adam lr must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got beta1={beta1} beta2={beta2}"
            )));
        }
        Ok(AdamParams { lr, beta1, beta2 })
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One in-place Adam update of `params` along `grads`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::ShapeMismatch {
            context: "adam step",
            expected: format!("{} parameters", state.len()),
            found: format!("{} parameters, {} gradients", params.len(), grads.len()),
        });
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adam gradients"));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..params.len() {
        state.m[i] = hp.beta1 * state.m[i] + (1.0 - hp.beta1) * grads[i];
        state.v[i] = hp.beta2 * state.v[i] + (1.0 - hp.beta2) * grads[i] * grads[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= hp.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With beta1 = 0 both corrected moments equal g and g^2, so the
        // first update is lr * g / (|g| + eps), magnitude ~ lr.
        let hp = AdamParams::new(0.002, 0.0, 0.99).unwrap();
        let mut params = vec![1.0, -2.0];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[0.5, -3.0], &mut state, &hp).unwrap();
        assert_abs_diff_eq!(params[0], 1.0 - 0.002, epsilon = 1e-7);
        assert_abs_diff_eq!(params[1], -2.0 + 0.002, epsilon = 1e-7);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let hp = AdamParams::new(0.01, 0.0, 0.99).unwrap();
        let mut params = vec![0.3, -0.7];
        let mut state = AdamState::new(2);
        adam_step(&mut params, &[1.0, 1.0], &mut state, &hp).unwrap();
        let after_first = params.clone();
        let v_after_first = state.v.clone();
        adam_step(&mut params, &[0.0, 0.0], &mut state, &hp).unwrap();
        assert_eq!(params, after_first);
        // Second moment decays while the parameters stand still.
        assert!(state.v.iter().zip(&v_after_first).all(|(a, b)| a < b));
    }

    #[test]
    fn rejects_mismatched_lengths_and_bad_hyperparameters() {
        let hp = AdamParams::new(0.01, 0.0, 0.99).unwrap();
        let mut params = vec![0.0; 3];
        let mut state = AdamState::new(2);
        assert!(adam_step(&mut params, &[0.0; 3], &mut state, &hp).is_err());
        assert!(AdamParams::new(0.0, 0.0, 0.99).is_err());
        assert!(AdamParams::new(0.01, 1.0, 0.99).is_err());
    }

    #[test]
    fn deterministic_across_reruns() {
        let hp = AdamParams::new(0.005, 0.0, 0.99).unwrap();
        let run = || {
            let mut params = vec![0.1, 0.2, 0.3];
            let mut state = AdamState::new(3);
            for k in 0..50 {
                let g: Vec<f64> = params.iter().map(|p| p * (k as f64 + 1.0)).collect();
                adam_step(&mut params, &g, &mut state, &hp).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
