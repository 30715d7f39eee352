//! Adam optimizer with bias-corrected moment estimates.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// First/second moment buffers for one parameter tensor, plus the shared
/// step counter. One `AdamState` per parameter; `t` is advanced by the
/// caller once per optimization step via [`AdamState::next_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub m: Tensor<S>,
    pub v: Tensor<S>,
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState {
            m: Tensor::zeros(rows, cols),
            v: Tensor::zeros(rows, cols),
            t: 0,
        }
    }

    pub fn for_param(p: &Tensor<S>) -> Self {
        Self::new(p.rows(), p.cols())
    }

    pub fn next_step(&mut self) {
        self.t += 1;
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update in place. The caller must have advanced `state.t`
/// to the current step index (1-based) before calling.
pub fn adam_step<S: Scalar>(
    param: &mut Tensor<S>,
    grad: &Tensor<S>,
    state: &mut AdamState<S>,
    lr: f64,
) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
    }
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(Error::Dimension(format!(
            "adam_step: param {:?}, grad {:?}, state {:?}",
            param.shape(),
            grad.shape(),
            state.m.shape()
        )));
    }
    if state.t == 0 {
        return Err(Error::Contract(
            "adam_step called before next_step advanced the step counter".into(),
        ));
    }
    let b1 = S::from_f64(ADAM_BETA1);
    let b2 = S::from_f64(ADAM_BETA2);
    let eps = S::from_f64(ADAM_EPS);
    let one = S::one();
    let t = state.t as i32;
    let corr1 = one - b1.powi(t);
    let corr2 = one - b2.powi(t);
    let lr_s = S::from_f64(lr);

    let m = state.m.data_mut();
    let v = state.v.data_mut();
    let p = param.data_mut();
    let g = grad.data();
    for k in 0..p.len() {
        m[k] = b1 * m[k] + (one - b1) * g[k];
        v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
        let m_hat = m[k] / corr1;
        let v_hat = v[k] / corr2;
        p[k] = p[k] - lr_s * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}
