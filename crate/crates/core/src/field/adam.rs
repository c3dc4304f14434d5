use crate::error::{AprfError, Result};
use crate::field::MlpField;

/// Adam with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self {
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }
}

/// One update: `theta <- theta - lr * wd * theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step(field: &mut MlpField, state: &mut AdamState, grads: &[f64], lr: f64) -> Result<()> {
    adam_update(field.params_mut(), state, grads, lr)
}

fn adam_update(params: &mut [f64], state: &mut AdamState, grads: &[f64], lr: f64) -> Result<()> {
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(AprfError::TrainingDiverged { step: state.step as usize, loss: f64::NAN });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let shrink = lr * state.weight_decay;
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= shrink * *p + lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}
