//! Adam with bias-corrected moments.

use super::layers::Param;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    /// `beta1 = 0.5`, `beta2 = 0.999`, `eps = 1e-8`.
    pub fn new(lr: f32) -> Self {
        Self {
            lr,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update of every parameter from its accumulated gradient.
    pub fn step(&mut self, params: &mut [&mut Param]) -> Result<()> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self
                .m
                .iter()
                .zip(params.iter())
                .any(|(m, p)| m.len() != p.value.len())
        {
            return Err(Error::shape("adam state does not match parameter list"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, c1) = (self.beta1 as f32, (1.0 - self.beta1) as f32);
        let (b2, c2) = (self.beta2 as f32, (1.0 - self.beta2) as f32);
        let inv_bc1 = (1.0 / bc1) as f32;
        let inv_sqrt_bc2 = (1.0 / bc2.sqrt()) as f32;
        let (lr, eps) = (self.lr, self.eps as f32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Param { value, grad, .. } = &mut **p;
            for (((w, &g), m), v) in value
                .iter_mut()
                .zip(grad.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + c1 * g;
                *v = b2 * *v + c2 * g * g;
                *w -= lr * (*m * inv_bc1) / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32, g: f32) -> Param {
        let mut p = Param::new("p", vec![1], vec![v]);
        p.grad[0] = g;
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Param::new("p", vec![3], vec![1.0, -2.0, 0.5]);
        let mut adam = AdamState::new(0.1);
        for _ in 0..3 {
            adam.step(&mut [&mut p]).unwrap();
        }
        assert_eq!(p.value, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_closed_form() {
        let mut p = scalar(1.0, 1.0);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [&mut p]).unwrap();
        assert_eq!(adam.t, 1);
        // m_hat = v_hat = 1 so the update is lr / (1 + eps)
        assert!((p.value[0] - 0.9).abs() < 1e-6);
    }

    #[test]
    fn two_steps_follow_recurrence() {
        let mut p = scalar(1.0, 1.0);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [&mut p]).unwrap();
        adam.step(&mut [&mut p]).unwrap();
        // m1 = 0.5, v1 = 0.001; m2 = 0.75, v2 = 0.001999
        assert!((adam.m[0][0] - 0.75).abs() < 1e-7);
        assert!((adam.v[0][0] as f64 - 0.001999).abs() < 1e-6 * 0.001999);
        let m_hat = 0.75 / (1.0 - 0.25);
        let v_hat = 0.001999 / (1.0 - 0.999f64 * 0.999);
        let expected = 0.9 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.value[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let mut a = scalar(1.0, 1.0);
        let mut b = scalar(1.0, 1.0);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut [&mut a]).unwrap();
        assert!(adam.step(&mut [&mut a, &mut b]).is_err());
    }
}
