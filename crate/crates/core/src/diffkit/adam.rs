use serde::{Deserialize, Serialize};

use super::params::{GradTape, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S> {
    pub m: Vec<Vec<S>>,
    pub v: Vec<Vec<S>>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<S>> = params
            .tensors()
            .iter()
            .map(|t| vec![S::zero(); t.data.len()])
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update. A tape with non-finite entries is
/// rejected and leaves both parameters and state untouched.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    tape: &GradTape<S>,
    state: &mut AdamState<S>,
) -> Result<()> {
    if !tape.all_finite() {
        return Err(Error::NonFinite("gradient tape".into()));
    }
    if state.m.len() != params.len() || tape.grads().len() != params.len() {
        return Err(Error::DimensionMismatch {
            context: "adam state",
            expected: params.len(),
            actual: state.m.len(),
        });
    }
    state.t += 1;
    let cfg = state.config;
    let (b1, b2) = (S::lit(cfg.beta1), S::lit(cfg.beta2));
    let bc1 = S::one() - S::lit(cfg.beta1.powi(state.t as i32));
    let bc2 = S::one() - S::lit(cfg.beta2.powi(state.t as i32));
    let lr = S::lit(cfg.lr);
    let eps = S::lit(cfg.epsilon);
    for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
        let g = &tape.grads()[k];
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for j in 0..tensor.data.len() {
            m[j] = b1 * m[j] + (S::one() - b1) * g[j];
            v[j] = b2 * v[j] + (S::one() - b2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            tensor.data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
