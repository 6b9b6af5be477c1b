//! Adam with per-group learning rates.

use crate::error::{Error, Result};
use crate::param::{LrGroup, ParamSet, Parameter};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
        }
    }
}

/// One bias-corrected Adam update of `param`, then clears its gradient.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState, lr: f64) -> Result<()> {
    let shape = param.tensor.shape();
    if param.gradient.shape() != shape || state.m.shape() != shape || state.v.shape() != shape {
        return Err(Error::Shape(format!(
            "adam step on `{}`: tensor {:?}, gradient {:?}, moments {:?}",
            param.name,
            shape,
            param.gradient.shape(),
            state.m.shape()
        )));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let grads = param.gradient.values();
    let weights = param.tensor.values_mut();
    let (m, v) = (state.m.values_mut(), state.v.values_mut());
    for i in 0..weights.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        weights[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    param.zero_grad();
    Ok(())
}

/// Adam over a whole [`ParamSet`], with one learning rate per [`LrGroup`].
#[derive(Debug, Clone)]
pub struct Adam {
    states: Vec<AdamState>,
    pub lr_contextual: f64,
    pub lr_other: f64,
}

impl Adam {
    pub fn new(params: &ParamSet, lr_contextual: f64, lr_other: f64) -> Self {
        Adam {
            states: params
                .iter()
                .map(|(_, p)| AdamState::new(p.tensor.shape()))
                .collect(),
            lr_contextual,
            lr_other,
        }
    }

    pub fn lr(&self, group: LrGroup) -> f64 {
        match group {
            LrGroup::Contextual => self.lr_contextual,
            LrGroup::Other => self.lr_other,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if self.states.len() != params.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, set has {}",
                self.states.len(),
                params.len()
            )));
        }
        let (lr_a, lr_b) = (self.lr_contextual, self.lr_other);
        for (param, state) in params.iter_mut().zip(self.states.iter_mut()) {
            let lr = match param.group {
                LrGroup::Contextual => lr_a,
                LrGroup::Other => lr_b,
            };
            adam_step(param, state, lr)?;
        }
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.states.first().map_or(0, |s| s.t)
    }
}
