use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers for one parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn for_tensor(t: &Tensor) -> Self {
        Self {
            step: 0,
            m: vec![0.0; t.numel()],
            v: vec![0.0; t.numel()],
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    /// One bias-corrected Adam update of `param` in place.
    pub fn step(&self, param: &mut Tensor, grad: &[f64], state: &mut AdamState) -> Result<()> {
        let n = param.numel();
        if grad.len() != n || state.m.len() != n || state.v.len() != n {
            return Err(Error::shape("adam_step", &param.shape, &[grad.len()]));
        }
        state.step += 1;
        let t = state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let moments = state.m.iter_mut().zip(state.v.iter_mut());
        for ((p, &g), (m, v)) in param.data.iter_mut().zip(grad).zip(moments) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
