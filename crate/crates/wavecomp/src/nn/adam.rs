//! Adam with the standard bias-corrected first/second moment update.

use super::{NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamParams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamParams { learning_rate, ..Default::default() }
    }
}

/// Step counter plus per-parameter moment estimates, zero-initialized.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub step: u64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl OptimState {
    pub fn new(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        OptimState { step: 0, first_moment: zeros.clone(), second_moment: zeros }
    }
}

/// One optimizer step over a parameter list and matching gradients.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut OptimState,
    hp: &AdamParams,
) -> Result<(), NnError> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape())
    {
        return Err(NnError::ShapeMismatch("parameter/gradient lists differ".into()));
    }
    if grads.iter().any(|g| !g.all_finite()) {
        return Err(NnError::NonFinite);
    }
    state.step += 1;
    let t = state.step as i32;
    let m_corr = 1.0 - hp.beta1.powi(t);
    let v_corr = 1.0 - hp.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut().zip(state.second_moment.iter_mut()))
    {
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
        {
            *mv = hp.beta1 * *mv + (1.0 - hp.beta1) * gv;
            *vv = hp.beta2 * *vv + (1.0 - hp.beta2) * gv * gv;
            let m_hat = *mv / m_corr;
            let v_hat = *vv / v_corr;
            *pv -= hp.learning_rate * m_hat / (v_hat.sqrt() + hp.epsilon);
        }
    }
    Ok(())
}
