use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use super::layers::Param;
use super::NumError;

/// Adam moments and step counter for one ordered parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl Adam {
    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` from their accumulated gradients.
    pub fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<(), NumError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.grad.len()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len()
            || self.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.grad.len() || p.grad.len() != p.value.len())
        {
            return Err(NumError::Shape("optimizer state does not match parameters"));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = &p.grad;
            let vals = p.value.data_mut();
            for i in 0..vals.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                vals[i] -= lr * mh / (libm::sqrt(vh) + self.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `peak`, then cosine decay to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn new(peak: f64, warmup_ratio: f64, total_steps: usize) -> Self {
        let warmup_steps = libm::ceil(warmup_ratio * total_steps as f64) as usize;
        Self {
            peak,
            warmup_steps,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.peak * step as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        self.peak * 0.5 * (1.0 + libm::cos(PI * progress))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = Param::new(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
        let before = p.clone();
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], 0.1).unwrap();
        assert_eq!(p.value, before.value);
    }

    #[test]
    fn one_scalar_step_matches_hand_formula() {
        let mut p = Param::new(Tensor::new(vec![1], vec![2.0]).unwrap());
        p.grad[0] = 0.5;
        let mut adam = Adam::default();
        adam.step(&mut [&mut p], 0.01).unwrap();
        // m = 0.05, v = 0.00025; bias-corrected: 0.5, 0.25 -> update 0.01 * 0.5 / (0.5 + 1e-8)
        let expect = 2.0 - 0.01 * 0.5 / (0.25f64.sqrt() + 1e-8);
        assert!((p.value.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn mismatched_state_is_error() {
        let mut a = Param::zeros(&[2]);
        let mut b = Param::zeros(&[3]);
        let mut adam = Adam::default();
        adam.step(&mut [&mut a], 0.1).unwrap();
        assert!(adam.step(&mut [&mut b], 0.1).is_err());
    }

    #[test]
    fn warmup_then_cosine() {
        let s = CosineSchedule::new(1e-3, 0.03, 100);
        assert_eq!(s.warmup_steps, 3);
        assert_eq!(s.lr(0), 0.0);
        assert_eq!(s.lr(3), 1e-3);
        assert!(s.lr(50) < 1e-3 && s.lr(50) > 0.0);
        assert!(s.lr(100).abs() < 1e-18);
    }
}
