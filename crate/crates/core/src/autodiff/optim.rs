use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.ids().map(|id| vec![0.0; store.tensor(id).len()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Bias-corrected Adam update applied in place. Every parameter must have a
/// populated gradient.
pub fn adam_step(store: &mut ParamStore, hyper: &AdamConfig, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} parameters, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    if let Some(id) = store.ids().find(|&id| store.grad_slot(id).is_none()) {
        return Err(Error::Contract(format!("missing gradient for {}", store.name(id))));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let g = store.grad_slot(id).expect("checked above").to_vec();
        let m = &mut state.m[id.0];
        let v = &mut state.v[id.0];
        let w = store.values_mut(id);
        for i in 0..g.len() {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            w[i] -= hyper.lr * mh / (vh.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1.0, 1.0, 1.0])).unwrap();
        store.set_grad(id, vec![0.3, -5.0, 0.0]).unwrap();
        let hyper = AdamConfig::default();
        let mut st = AdamState::new(&store);
        adam_step(&mut store, &hyper, &mut st).unwrap();
        let w = store.tensor(id).values();
        assert!((w[0] - (1.0 - hyper.lr)).abs() < 1e-10);
        assert!((w[1] - (1.0 + hyper.lr)).abs() < 1e-10);
        assert_eq!(w[2], 1.0);
    }

    #[test]
    fn missing_gradient_is_contract_error() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(0.0)).unwrap();
        let mut st = AdamState::new(&store);
        let err = adam_step(&mut store, &AdamConfig::default(), &mut st).unwrap_err();
        assert!(err.to_string().contains("missing gradient for w"));
    }

    #[test]
    fn converges_on_shifted_quadratic() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::scalar(0.0)).unwrap();
        let hyper = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&store);
        for _ in 0..100 {
            store.zero_grad();
            let tape = Tape::new();
            let w = tape.param(&store, id);
            let three = tape.constant(1, 1, vec![3.0]).unwrap();
            let d = tape.sub(w, three).unwrap();
            let loss = tape.mul(d, d).unwrap();
            tape.backward(loss, &mut store).unwrap();
            adam_step(&mut store, &hyper, &mut st).unwrap();
        }
        let w = store.tensor(id).values()[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }
}
