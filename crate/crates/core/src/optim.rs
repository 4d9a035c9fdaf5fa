//! Adam with bias-corrected first and second moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub steps: u64,
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Tensor<f32>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect::<Vec<_>>();
        Self {
            config,
            steps: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update of every parameter with learning rate `lr`.
    pub fn step(&mut self, params: &mut [Tensor<f32>], grads: &[Tensor<f32>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.steps += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.steps as i32);
        let c2 = 1.0 - beta2.powi(self.steps as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            g.expect_shape(p.shape(), "adam")?;
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                let gi = f64::from(gi);
                let mn = beta1 * f64::from(*mi) + (1.0 - beta1) * gi;
                let vn = beta2 * f64::from(*vi) + (1.0 - beta2) * gi * gi;
                *mi = mn as f32;
                *vi = vn as f32;
                *pi = (f64::from(*pi) - lr * (mn / c1) / ((vn / c2).sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}
