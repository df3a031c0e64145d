use crate::error::{Error, Result};
use crate::netblocks::{ParamStore, Tensor};

pub const BETA1: f64 = 0.5;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(store: &ParamStore<f32>) -> Self {
        let z: Vec<Tensor<f32>> = (0..store.len()).map(|i| Tensor::zeros(store.value(i).shape())).collect();
        Self {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().chain(&self.v).all(Tensor::is_finite)
    }
}

/// One bias-corrected Adam step on `store` using its gradient buffers.
pub fn optimizer_update(store: &mut ParamStore<f32>, state: &mut AdamState, lr: f64) -> Result<()> {
    if state.m.len() != store.len() || state.v.len() != store.len() {
        return Err(Error::shape(format!(
            "optimizer holds {} moments for {} parameters",
            state.m.len(),
            store.len()
        )));
    }
    for i in 0..store.len() {
        let shape = store.value(i).shape();
        if state.m[i].shape() != shape || state.v[i].shape() != shape || store.grad(i).shape() != shape {
            return Err(Error::shape(format!("moment shape mismatch for {}", store.name(i))));
        }
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powf(state.t as f64);
    let c2 = 1.0 - BETA2.powf(state.t as f64);
    for i in 0..store.len() {
        let g = store.grad(i).data().to_vec();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = store.value_mut(i).data_mut();
        for j in 0..g.len() {
            let gj = g[j] as f64;
            let mj = BETA1 * m[j] as f64 + (1.0 - BETA1) * gj;
            let vj = BETA2 * v[j] as f64 + (1.0 - BETA2) * gj * gj;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let step = lr * (mj / c1) / ((vj / c2).sqrt() + ADAM_EPS);
            p[j] = (p[j] as f64 - step) as f32;
        }
    }
    Ok(())
}
