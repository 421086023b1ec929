use super::Tensor;
use crate::error::{ensure, Result};

pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;

/// First/second moment buffers for one parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl AdamState {
    pub fn new(numel: usize) -> Self {
        Self { step: 0, m: vec![0.0; numel], v: vec![0.0; numel] }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(param: &mut Tensor, grad: &Tensor, state: &mut AdamState, lr: f32) -> Result<()> {
    ensure!(
        param.shape() == grad.shape() && state.m.len() == param.numel(),
        ShapeMismatch,
        "adam: param {:?}, grad {:?}, state {}",
        param.shape(),
        grad.shape(),
        state.m.len()
    );
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, &g), m), v) in
        param.data_mut().iter_mut().zip(grad.data()).zip(&mut state.m).zip(&mut state.v)
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}
