//! Adam with bias correction.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let first: Vec<Vec<f64>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            second: first.clone(),
            first,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.second[index]
    }
}

/// Applies one Adam update to every parameter in `store` using its gradient
/// slot. Gradients are left in place; the caller resets them.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<(), TensorError> {
    if state.first.len() != store.len() {
        return Err(TensorError::Contract(
            "optimizer state does not match parameters",
        ));
    }
    for id in store.ids() {
        let t = store.get(id);
        if t.grad().is_none() {
            return Err(TensorError::Contract(
                "adam step on a parameter without a gradient",
            ));
        }
        if state.first[id.index()].len() != t.len() {
            return Err(TensorError::Contract(
                "optimizer state does not match parameters",
            ));
        }
    }

    state.step += 1;
    let AdamConfig {
        lr,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let correction1 = 1.0 - libm::pow(beta1, state.step as f64);
    let correction2 = 1.0 - libm::pow(beta2, state.step as f64);

    for id in store.ids() {
        let i = id.index();
        let param = store.get_mut(id);
        let grad = param.grad().expect("checked above").to_vec();
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for (j, value) in param.data_mut().iter_mut().enumerate() {
            let g = grad[j];
            m[j] = beta1 * m[j] + (1.0 - beta1) * g;
            v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
            let m_hat = m[j] / correction1;
            let v_hat = v[j] / correction2;
            *value -= lr * m_hat / (libm::sqrt(v_hat) + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![value]).unwrap());
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut store = one_param(0.3);
        let mut state = AdamState::new(&store, AdamConfig::default());
        store.zero_grads();
        adam_step(&mut store, &mut state).unwrap();
        assert_eq!(store.iter().next().unwrap().1.data(), &[0.3]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = one_param(0.0);
        let mut state = AdamState::new(&store, AdamConfig::default());
        store.zero_grads();
        let id = store.find("w").unwrap();
        store.get_mut(id).accumulate_grad(&[1.0]);
        adam_step(&mut store, &mut state).unwrap();
        // m̂ = v̂ = 1 at t = 1, so the step is lr / (1 + ε).
        let delta = store.get(id).item();
        assert!((delta + 0.001 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
        assert_eq!(store.get(id).grad().unwrap(), &[1.0]);
    }

    #[test]
    fn two_steps_advance_counter() {
        let mut store = one_param(0.0);
        let mut state = AdamState::new(&store, AdamConfig::default());
        let id = store.find("w").unwrap();
        store.get_mut(id).accumulate_grad(&[0.5]);
        adam_step(&mut store, &mut state).unwrap();
        adam_step(&mut store, &mut state).unwrap();
        assert_eq!(state.step_count(), 2);
        assert!(state.second_moment(0)[0] > 0.0);
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut store = one_param(0.0);
        let mut state = AdamState::new(&store, AdamConfig::default());
        assert!(adam_step(&mut store, &mut state).is_err());
        assert_eq!(state.step_count(), 0);
    }
}
