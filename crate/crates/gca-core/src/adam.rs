//! Adam optimizer with bias correction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected Adam update applied to `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch {
                context: "adam_step".into(),
                expected: format!("{} params/grads", self.m.len()),
                got: format!("{} params, {} grads", params.len(), grad.len()),
            });
        }
        self.t += 1;
        let b1t = self.beta1.powi(self.t as i32);
        let b2t = self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - b1t);
            let v_hat = self.v[i] / (1.0 - b2t);
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_leaves_params_unchanged() {
        let mut st = AdamState::new(3, 1e-2);
        let mut params = vec![1.0, -2.0, 0.5];
        st.step(&mut params, &[0.0; 3]).unwrap();
        assert_eq!(params, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // At t=1 the bias-corrected update is lr * g / (|g| + eps'), so the
        // step is close to -lr * sign(g) for any nonzero g.
        let lr = 1e-3;
        let mut st = AdamState::new(2, lr);
        let mut params = vec![0.0, 0.0];
        st.step(&mut params, &[0.37, -120.0]).unwrap();
        assert!((params[0] + lr).abs() < 1e-6 * lr + 1e-9);
        assert!((params[1] - lr).abs() < 1e-6 * lr + 1e-9);
    }

    #[test]
    fn trajectory_is_deterministic() {
        let run = || {
            let mut st = AdamState::new(2, 1e-2);
            let mut p = vec![1.0, 2.0];
            for _ in 0..5 {
                st.step(&mut p, &[0.3, -0.7]).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn length_mismatch_is_error() {
        let mut st = AdamState::new(3, 1e-2);
        let mut params = vec![0.0; 3];
        assert!(st.step(&mut params, &[0.0; 2]).is_err());
    }
}
