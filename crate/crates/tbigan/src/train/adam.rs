//! Bias-corrected Adam over a parameter set.

use crate::error::{Error, Result};
use crate::model::ParamSet;

pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment buffers shaped like their parameters plus the step
/// counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let m = (0..params.len())
            .map(|i| vec![0.0; params.tensor_at(i).numel()])
            .collect();
        let v = (0..params.len())
            .map(|i| vec![0.0; params.tensor_at(i).numel()])
            .collect();
        AdamState { m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update. `grads` is indexed like the parameter set; a non-finite
    /// gradient aborts before any parameter changes.
    pub fn step(
        &mut self,
        params: &mut ParamSet,
        grads: &[Vec<f64>],
        lr: f64,
        beta1: f64,
        beta2: f64,
    ) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != params.tensor_at(i).numel() {
                return Err(Error::Contract(format!(
                    "gradient {i} has {} values, parameter has {}",
                    g.len(),
                    params.tensor_at(i).numel()
                )));
            }
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient for parameter '{}'; step aborted",
                    params.name(i)
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for i in 0..params.len() {
            let g = &grads[i];
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = params.tensor_mut_at(i).data_mut();
            for j in 0..g.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
        for i in 0..params.len() {
            if !params.tensor_at(i).is_finite() {
                return Err(Error::Numerical(format!(
                    "parameter '{}' became non-finite after the update",
                    params.name(i)
                )));
            }
        }
        Ok(())
    }
}

/// Scale gradients in place so their global L2 norm is at most `max_norm`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
    norm
}
