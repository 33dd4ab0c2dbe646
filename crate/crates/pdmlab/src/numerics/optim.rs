//! Learnable parameters and the Adam optimizer.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A learnable tensor with its gradient slot and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    m: Tensor,
    v: Tensor,
    step: u64,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        Self { value, grad: None, m, v, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn set_grad(&mut self, g: Tensor) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::InvalidArgument(format!(
                "gradient shape {:?} vs value shape {:?}",
                g.shape(),
                self.value.shape()
            )));
        }
        self.grad = Some(g);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// One bias-corrected Adam update of every parameter. Fails before touching
/// anything if a gradient is missing.
pub fn adam_step(params: &mut [&mut Parameter], cfg: &AdamConfig) -> Result<()> {
    if let Some(i) = params.iter().position(|p| p.grad.is_none()) {
        return Err(Error::State(format!("parameter {} has no gradient", i)));
    }
    for p in params.iter_mut() {
        let g = p.grad.take().expect("checked above");
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let m = p.m.data_mut();
        let v = p.v.data_mut();
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let gi = g.data()[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            w[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = Parameter::new(Tensor::vector(vec![1.5, -2.0]));
        p.set_grad(Tensor::zeros(&[2])).unwrap();
        adam_step(&mut [&mut p], &AdamConfig::default()).unwrap();
        assert_eq!(p.value.data(), &[1.5, -2.0]);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Parameter::new(Tensor::scalar(0.0));
        p.set_grad(Tensor::scalar(1.0)).unwrap();
        adam_step(&mut [&mut p], &AdamConfig::with_lr(0.1)).unwrap();
        // m_hat = 1, v_hat = 1 after bias correction
        let expected = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_state_error() {
        let mut a = Parameter::new(Tensor::scalar(0.0));
        let mut b = Parameter::new(Tensor::scalar(0.0));
        a.set_grad(Tensor::scalar(1.0)).unwrap();
        assert!(matches!(adam_step(&mut [&mut a, &mut b], &AdamConfig::default()), Err(Error::State(_))));
        assert_eq!(a.value.item(), 0.0);
        assert_eq!(a.step(), 0);
    }

    #[test]
    fn identical_state_identical_update() {
        let mut a = Parameter::new(Tensor::vector(vec![0.3, 0.3]));
        let mut b = a.clone();
        for _ in 0..3 {
            a.set_grad(Tensor::vector(vec![0.2, -1.0])).unwrap();
            b.set_grad(Tensor::vector(vec![0.2, -1.0])).unwrap();
            adam_step(&mut [&mut a, &mut b], &AdamConfig::default()).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn shape_checked_gradient() {
        let mut p = Parameter::new(Tensor::zeros(&[2]));
        assert!(p.set_grad(Tensor::zeros(&[3])).is_err());
    }
}
