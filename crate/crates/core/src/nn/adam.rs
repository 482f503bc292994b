//! Adam optimizer with classic L2 weight decay (decay added to the gradient
//! before the moment updates).

use super::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            alpha: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First/second moment accumulators mirroring the learnable parameters.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let shapes: Vec<Tensor> = params
            .layers()
            .iter()
            .flat_map(|l| l.learnable())
            .map(|t| t.zeros_like())
            .collect();
        AdamState {
            config,
            m: shapes.clone(),
            v: shapes,
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

pub(crate) fn step(
    params: &mut ParamStore,
    grads: &ParamStore,
    state: &mut AdamState,
) -> Result<()> {
    for lg in grads.layers() {
        for g in lg.learnable() {
            g.check_finite("gradient").map_err(|_| {
                Error::Numerical("non-finite gradient passed to adam_step".into())
            })?;
        }
    }
    state.t += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.t as i32);
    let bc2 = 1.0 - c.beta2.powi(state.t as i32);

    let mut slot = 0;
    let (ms, vs) = (&mut state.m, &mut state.v);
    params.for_each_learnable_mut(grads, |theta, grad| {
        let m = &mut ms[slot];
        let v = &mut vs[slot];
        for i in 0..theta.len() {
            let g = grad[i] + c.weight_decay * theta[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] -= c.alpha * m_hat / (v_hat.sqrt() + c.epsilon);
        }
        slot += 1;
    });
    Ok(())
}
