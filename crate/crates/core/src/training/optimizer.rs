//! AMSGrad.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmsGradConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AmsGradConfig {
    fn default() -> Self {
        AmsGradConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AmsGrad {
    pub config: AmsGradConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub v_hat: Vec<Tensor>,
    pub step: u64,
}

impl AmsGrad {
    pub fn new<'a>(config: AmsGradConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let zeros: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        AmsGrad {
            config,
            m: zeros.clone(),
            v: zeros.clone(),
            v_hat: zeros,
            step: 0,
        }
    }

    /// Applies one update in place.
    ///
    /// The step size carries the bias corrections of both moments,
    /// `lr · √(1 − β₂ᵗ) / (1 − β₁ᵗ)`, and divides by `√v̂ + ε`.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let c = self.config;
        self.step += 1;
        let t = self.step as i32;
        let lr_t = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::dim("amsgrad", p.shape(), g.shape()));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let v_hat = self.v_hat[i].data_mut();
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
                v_hat[j] = v_hat[j].max(v[j]);
                *w -= lr_t * m[j] / (v_hat[j].sqrt() + c.epsilon);
            }
        }
        Ok(())
    }
}
