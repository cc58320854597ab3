use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Adam moments and step counter, one moment pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            step: 0,
            beta1,
            beta2,
            eps,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. `grads` is aligned with the parameter store.
pub fn adam_step(params: &mut ParamStore, grads: &[Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::InvalidInput(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.first_moment.len() != params.len() {
        return Err(Error::InvalidInput(format!(
            "{} gradients / {} moments for {} parameters",
            grads.len(),
            state.first_moment.len(),
            params.len()
        )));
    }
    for id in params.ids() {
        let g = &grads[id.0];
        if g.shape() != params.get(id).shape() {
            return Err(Error::InvalidInput(format!(
                "gradient for {} has shape {:?}, parameter has {:?}",
                params.name(id),
                g.shape(),
                params.get(id).shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {}", params.name(id))));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for id in params.ids() {
        let g = grads[id.0].data();
        let m = state.first_moment[id.0].data_mut();
        for (mi, gi) in m.iter_mut().zip(g) {
            *mi = state.beta1 * *mi + (1.0 - state.beta1) * gi;
        }
        let v = state.second_moment[id.0].data_mut();
        for (vi, gi) in v.iter_mut().zip(g) {
            *vi = state.beta2 * *vi + (1.0 - state.beta2) * gi * gi;
        }
        let m = state.first_moment[id.0].data();
        let v = state.second_moment[id.0].data();
        let p = params.get_mut(id).data_mut();
        for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
            let m_hat = mi / bc1;
            let v_hat = vi / bc2;
            *pi -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}
