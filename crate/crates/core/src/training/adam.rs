use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moments for each parameter tensor, in network parameter order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        AdamState {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One Adam update from the gradients stored on `params`. Nothing is
    /// modified if any gradient is missing, mis-shaped or non-finite.
    pub fn step(&mut self, mut params: Vec<&mut Tensor>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} tensors, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            let g = p
                .grad()
                .ok_or_else(|| Error::State(format!("parameter {i} has no gradient buffer")))?;
            if g.len() != self.m[i].len() {
                return Err(Error::shape(format!(
                    "parameter {i} has {} gradient entries, optimizer expects {}",
                    g.len(),
                    self.m[i].len()
                )));
            }
            if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in parameter {i} at index {bad}"
                )));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad[j] as f64;
                let mj = beta1 * m[j] as f64 + (1.0 - beta1) * g;
                let vj = beta2 * v[j] as f64 + (1.0 - beta2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let m_hat = mj / bc1;
                let v_hat = vj / bc2;
                *w = (*w as f64 - lr * m_hat / (v_hat.sqrt() + eps)) as f32;
            }
        }
        Ok(())
    }
}
