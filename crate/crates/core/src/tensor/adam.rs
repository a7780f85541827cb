//! Adam optimizer with bias correction.
//!
//! State (first/second moment buffers and the shared step counter) is keyed
//! by parameter name, so a single optimizer instance can serve a whole
//! parameter group across steps while tensors themselves live elsewhere.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    slots: HashMap<String, Slot>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            slots: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over a parameter group. Gradients are read from each
    /// tensor's grad buffer and must be finite; a parameter whose gradient
    /// is entirely zero (and has accumulated no moment) stays unchanged.
    pub fn step<'a, I>(&mut self, params: I, lr: f64) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor)>,
    {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, tensor) in params {
            if !tensor.grad().iter().all(|g| g.is_finite()) {
                return Err(Error::contract(format!(
                    "non-finite gradient for parameter {name}"
                )));
            }
            let n = tensor.numel();
            let slot = self.slots.entry(name.to_string()).or_insert_with(|| Slot {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if slot.m.len() != n {
                return Err(Error::contract(format!(
                    "parameter {name} changed size between optimizer steps"
                )));
            }
            for i in 0..n {
                let g = tensor.grad()[i];
                slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
                slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                tensor.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            tensor.check_finite("adam_step")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        p.grad_mut()[0] = 1.0;
        let mut opt = Adam::default();
        opt.step([("p", &mut p)], 0.1).unwrap();
        // m̂ = v̂ = 1 after bias correction, so Δ = -lr / (1 + ε).
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15, "{}", p.data()[0]);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut p = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let mut opt = Adam::default();
        opt.step([("p", &mut p)], 0.1).unwrap();
        assert_eq!(p.data(), &[0.5, -0.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn constant_gradient_two_steps() {
        // With a constant gradient, bias-corrected m̂/√v̂ stays 1, so each
        // step moves by exactly lr/(1+ε·aux) ≈ lr.
        let mut p = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let mut opt = Adam::default();
        for _ in 0..2 {
            p.zero_grad();
            p.grad_mut()[0] = 2.0;
            opt.step([("p", &mut p)], 0.01).unwrap();
        }
        assert!((p.data()[0] + 0.02).abs() < 1e-6, "{}", p.data()[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        p.grad_mut()[0] = f64::NAN;
        let mut opt = Adam::default();
        let err = opt.step([("encoder.w", &mut p)], 0.1).unwrap_err();
        assert!(err.to_string().contains("encoder.w"));
    }
}
