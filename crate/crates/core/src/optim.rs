//! Adam with bias correction.

use crate::config::TrainConfig;
use crate::params::ParamStore;
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .values()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect()
        };
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn from_config(params: &ParamStore, cfg: &TrainConfig) -> Self {
        Self::new(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from `grads` (one tensor per parameter, store
    /// order), then zeroes them.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut [Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(TensorError::Contract(format!(
                "adam step got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if let Some((i, g)) = grads
            .iter()
            .enumerate()
            .find(|(i, g)| g.shape() != params.values()[*i].shape())
        {
            return Err(TensorError::Shape {
                op: "adam_step",
                lhs: params.values()[i].shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (((param, grad), m), v) in params
            .values_mut()
            .iter_mut()
            .zip(grads.iter_mut())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            let it = param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((w, &g), (mi, vi)) in it {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            grad.fill(0.0);
        }
        Ok(())
    }
}
