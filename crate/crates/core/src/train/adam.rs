use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment arrays congruent with one [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F = f32> {
    pub config: AdamConfig,
    pub m: Vec<F>,
    pub v: Vec<F>,
    pub step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam step. Frozen tensors are left untouched.
pub fn adam_update<F: Scalar>(params: &mut ParamStore<F>, grads: &[F], state: &mut AdamState<F>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("adam gradient", params.len(), grads.len()));
    }
    state.step += 1;
    let c = state.config;
    let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
    let bc1 = F::one() - F::lit(c.beta1.powi(state.step as i32));
    let bc2 = F::one() - F::lit(c.beta2.powi(state.step as i32));
    let (lr, eps) = (F::lit(c.lr), F::lit(c.eps));
    let mask = params.trainable_mask();
    let data = params.data_mut();
    for i in 0..data.len() {
        if !mask[i] {
            continue;
        }
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (F::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (F::one() - b2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
