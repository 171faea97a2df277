//! Adam optimizer.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam { cfg, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    /// Applies one update. `params` and `grads` must line up and keep the same
    /// order and shapes on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| alloc::vec![0.0; p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let AdamConfig { learning_rate, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - libm::pow(beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || self.first[i].len() != p.len() {
                return Err(Error::InvalidArgument(alloc::format!("parameter {i} changed shape")));
            }
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (k, (w, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gv;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gv * gv;
                let update = learning_rate * (m[k] / c1) / (libm::sqrt(v[k] / c2) + eps);
                *w -= update;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = Tensor::vector(alloc::vec![0.3, -1.2, 5.0]).unwrap();
        let before = p.clone();
        let g = Tensor::vector(alloc::vec![1.0, -2.0, 0.5]).unwrap();
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.0, ..AdamConfig::default() });
        for _ in 0..3 {
            adam.step(&mut [&mut p], core::slice::from_ref(&g)).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = Tensor::vector(alloc::vec![1.0, 1.0]).unwrap();
        let g = Tensor::vector(alloc::vec![4.0, -0.01]).unwrap();
        let mut adam = Adam::new(AdamConfig { learning_rate: 0.1, ..AdamConfig::default() });
        adam.step(&mut [&mut p], &[g]).unwrap();
        assert!((p.data()[0] - 0.9).abs() < 1e-6);
        assert!((p.data()[1] - 1.1).abs() < 1e-4);
    }
}
