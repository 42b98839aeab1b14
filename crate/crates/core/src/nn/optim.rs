use serde::{Deserialize, Serialize};

use super::array::Scalar;
use super::param::Parameter;
use crate::error::{MarlError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are allocated lazily on the
/// first step and matched to parameters by position.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. `epoch` only labels a divergence error.
    pub fn step(&mut self, params: &mut [&mut Parameter<T>], epoch: usize) -> Result<()> {
        if let Some(p) = params.iter().find(|p| !p.grad.all_finite()) {
            return Err(MarlError::TrainingDiverged {
                epoch,
                detail: format!("non-finite gradient in {}", p.name),
            });
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
            return Err(MarlError::State("optimizer state does not match parameter list".into()));
        }
        self.step += 1;
        let c = self.config;
        let f = T::from_f64_lossy;
        let (b1, b2) = (f(c.beta1), f(c.beta2));
        let bc1 = f(1.0 - c.beta1.powi(self.step as i32));
        let bc2 = f(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (f(c.lr), f(c.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Parameter { value, grad, .. } = &mut **p;
            for (((w, &g), mi), vi) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Array;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = Parameter::new("w", Array::<f32>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.value.clone();
        let mut opt = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            opt.step(&mut [&mut p], 0).unwrap();
        }
        assert_eq!(p.value, before);
    }

    #[test]
    fn quadratic_converges() {
        let mut p = Parameter::new("x", Array::<f32>::scalar(0.0));
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() });
        for _ in 0..200 {
            let x = p.value.data()[0];
            p.grad.data_mut()[0] = 2.0 * (x - 3.0);
            opt.step(&mut [&mut p], 0).unwrap();
        }
        assert!((p.value.data()[0] - 3.0).abs() < 1e-2, "x = {}", p.value.data()[0]);
    }

    #[test]
    fn nan_gradient_is_divergence() {
        let mut p = Parameter::new("w", Array::<f32>::scalar(1.0));
        p.grad.data_mut()[0] = f32::NAN;
        let err = Adam::new(AdamConfig::default()).step(&mut [&mut p], 7);
        assert!(matches!(err, Err(MarlError::TrainingDiverged { epoch: 7, .. })));
    }
}
