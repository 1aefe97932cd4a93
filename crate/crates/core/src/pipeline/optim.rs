use crate::diffcore::ParameterStore;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates plus the step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ParameterStore,
    pub v: ParameterStore,
}

fn zeros_like(p: &ParameterStore) -> ParameterStore {
    p.iter()
        .map(|(n, t)| (n.clone(), crate::diffcore::Tensor::zeros(t.shape())))
        .collect()
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        AdamState {
            step: 0,
            m: zeros_like(params),
            v: zeros_like(params),
        }
    }
}

/// Adam with decoupled weight decay:
/// `p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`.
pub fn optimizer_step(
    params: &mut ParameterStore,
    grads: &ParameterStore,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (name, p) in params.iter_mut() {
        let g = grads.require(name)?;
        if !g.same_shape(p) {
            return Err(Error::Shape(format!("gradient for {name} has shape {:?}", g.shape())));
        }
        let m = state.m.get_mut(name).ok_or_else(|| Error::Shape(format!("no optimizer state for {name}")))?;
        let v = state.v.get_mut(name).expect("moments created together");
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            let update = (*mi / c1) / ((*vi / c2).sqrt() + ADAM_EPS);
            *pi -= lr * (update + weight_decay * *pi);
        }
    }
    Ok(())
}

/// `acc += w * g`, entry by entry.
pub fn accumulate(acc: &mut ParameterStore, g: &ParameterStore, w: f64) -> Result<()> {
    for (name, a) in acc.iter_mut() {
        let gi = g.require(name)?;
        for (x, y) in a.data_mut().iter_mut().zip(gi.data()) {
            *x += w * y;
        }
    }
    Ok(())
}

pub fn zero_grads(p: &ParameterStore) -> ParameterStore {
    zeros_like(p)
}
