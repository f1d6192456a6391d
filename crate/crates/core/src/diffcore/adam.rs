use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};

/// Bias-corrected Adam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            ..Adam::default()
        }
    }

    /// Apply one update to every parameter that received a gradient.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients) {
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            let Some(g) = grads.get(super::params::ParamId(i)) else {
                continue;
            };
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let w = p.value.data_mut();
            for k in 0..w.len() {
                p.m[k] = self.beta1 * p.m[k] + (1.0 - self.beta1) * g[k];
                p.v[k] = self.beta2 * p.v[k] + (1.0 - self.beta2) * g[k] * g[k];
                let m_hat = p.m[k] / bc1;
                let v_hat = p.v[k] / bc2;
                w[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
