//! Adam optimizer with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment state for one parameter buffer. The step counter is per buffer so
/// buffers restored from a checkpoint resume with the right bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], hp: &AdamParams) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam step: params {} grads {} state {}",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let bc1 = 1.0 - hp.beta1.powi(self.t as i32);
        let bc2 = 1.0 - hp.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = hp.beta1 * self.m[i] + (1.0 - hp.beta1) * g;
            self.v[i] = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= hp.lr * mhat / (vhat.sqrt() + hp.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_two_steps_match_hand_computation() {
        let hp = AdamParams {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut st = AdamState::new(1);
        let mut p = vec![1.0];

        let g1 = 2.0;
        st.step(&mut p, &[g1], &hp).unwrap();
        // t=1: mhat = g1, vhat = g1^2, step = lr * g1 / (|g1| + eps)
        let expect1 = 1.0 - 0.1 * g1 / (g1.abs() + 1e-8);
        assert!((p[0] - expect1).abs() < 1e-12, "{} vs {expect1}", p[0]);

        let g2 = -1.0;
        st.step(&mut p, &[g2], &hp).unwrap();
        let m2 = 0.9 * (0.1 * g1) + 0.1 * g2;
        let v2 = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
        let mhat = m2 / (1.0 - 0.9f64.powi(2));
        let vhat = v2 / (1.0 - 0.999f64.powi(2));
        let expect2 = expect1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!((p[0] - expect2).abs() < 1e-12);
    }

    #[test]
    fn descends_a_quadratic() {
        let hp = AdamParams {
            lr: 0.05,
            ..AdamParams::default()
        };
        let mut st = AdamState::new(1);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = 2.0 * p[0]; // d/dp of p^2
            st.step(&mut p, &[g], &hp).unwrap();
        }
        assert!(p[0].abs() < 0.05, "{}", p[0]);
    }

    #[test]
    fn rejects_length_mismatch() {
        let mut st = AdamState::new(2);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut p, &[0.0; 3], &AdamParams::default()).is_err());
    }
}
