use crate::error::{Error, Result};

use super::Real;

/// Adam moments for a list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Real> AdamState<T> {
    /// Zeroed moments shaped like `shapes` (element counts), with
    /// β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(shapes: &[usize], learning_rate: f64) -> Self {
        Self {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update with bias correction; `t` is advanced first.
pub fn adam_step<T: Real>(params: &mut [&mut [T]], grads: &[Vec<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape(format!(
            "adam got {} parameter tensors, {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, ((p, g), m)) in params.iter().zip(grads).zip(&state.m).enumerate() {
        if p.len() != g.len() || p.len() != m.len() {
            return Err(Error::Shape(format!(
                "tensor {i}: {} parameters, {} gradients, {} moments",
                p.len(),
                g.len(),
                m.len()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64(state.beta1);
    let b2 = T::from_f64(state.beta2);
    let one_m_b1 = T::from_f64(1.0 - state.beta1);
    let one_m_b2 = T::from_f64(1.0 - state.beta2);
    let correct1 = T::from_f64(1.0 / (1.0 - state.beta1.powi(t)));
    let correct2 = T::from_f64(1.0 / (1.0 - state.beta2.powi(t)));
    let lr = T::from_f64(state.learning_rate);
    let eps = T::from_f64(state.epsilon);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, &gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + one_m_b1 * gi;
            *vi = b2 * *vi + one_m_b2 * gi * gi;
            let m_hat = *mi * correct1;
            let v_hat = *vi * correct2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
