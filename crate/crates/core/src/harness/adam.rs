//! Adam with L2 weight decay folded into the gradient.

use crate::autodiff::Tensor;
use crate::params::ParamSet;

use super::HarnessError;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Adam { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Number of steps taken so far.
    pub fn steps(&self) -> i32 {
        self.t
    }

    /// One bias-corrected update with `g + weight_decay * w`. Parameters are
    /// left untouched if any gradient entry is non-finite.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), HarnessError> {
        assert_eq!(grads.len(), params.len(), "one gradient per parameter");
        if let Some(k) = grads.iter().position(|g| !g.is_finite()) {
            return Err(HarnessError::NonFiniteGradient { param: params.name(k).to_string() });
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let w = params.get_mut(k).data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i] + self.weight_decay * w[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                w[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
