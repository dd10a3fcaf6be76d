//! Adam optimizer over parameter tensors.

use super::{Result, Tensor, TensorError};

/// First/second moment estimates, one pair per parameter tensor.
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState { step: 0, m: Vec::new(), v: Vec::new() },
        }
    }

    pub fn state(&self) -> &AdamState {
        &self.state
    }

    /// One update over `params` using their accumulated gradients (missing
    /// gradients count as zero). Deterministic given identical inputs.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if self.state.m.is_empty() {
            for p in params {
                self.state.m.push(vec![0.0; p.numel()]);
                self.state.v.push(vec![0.0; p.numel()]);
            }
        }
        if self.state.m.len() != params.len() {
            return Err(TensorError::InvalidArg {
                op: "adam_step",
                msg: format!(
                    "parameter count changed: state has {}, got {}",
                    self.state.m.len(),
                    params.len()
                ),
            });
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);

        for (i, p) in params.iter().enumerate() {
            let mut data = p.data();
            if self.state.m[i].len() != data.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam_step",
                    lhs: vec![self.state.m[i].len()],
                    rhs: vec![data.len()],
                });
            }
            let grad = p.grad().unwrap_or_else(|| vec![0.0; data.len()]);
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                data[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            p.set_data(&data);
        }
        Ok(())
    }
}
