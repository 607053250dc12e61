use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam moment estimates keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<String, Vec<f64>>,
    second: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Default::default()
        }
    }
}

/// One bias-corrected Adam update using the gradients held in `params`.
pub fn optimizer_step(params: &mut ParamStore, state: &mut OptimizerState) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad.is_none()) {
        return Err(Error::MissingGrad(name.to_string()));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    for (name, t) in params.iter_mut() {
        let n = t.len();
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; n]);
        let g = t.grad.as_ref().expect("checked above");
        for i in 0..n {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            t.values[i] -= learning_rate * mhat / (vhat.sqrt() + epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("x", Tensor::full(&[1], x)).unwrap();
        s
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = scalar_store(0.7);
        let mut st = OptimizerState::new(AdamConfig::default());
        for _ in 0..5 {
            s.zero_grad();
            optimizer_step(&mut s, &mut st).unwrap();
        }
        assert_eq!(s.get("x").unwrap().values[0], 0.7);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut s = scalar_store(0.0);
        let mut st = OptimizerState::new(AdamConfig::default());
        let mut prev = 0.0;
        for _ in 0..20 {
            s.get_mut("x").unwrap().grad = Some(vec![1.0]);
            optimizer_step(&mut s, &mut st).unwrap();
            let x = s.get("x").unwrap().values[0];
            assert!(x < prev);
            prev = x;
        }
    }

    #[test]
    fn missing_grad() {
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::default();
        assert!(matches!(
            optimizer_step(&mut s, &mut st),
            Err(Error::MissingGrad(_))
        ));
    }

    #[test]
    fn quadratic_bowl_converges() {
        // reference update rule, written out independently
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        let (mut x, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let mut s = scalar_store(1.0);
        let mut st = OptimizerState::new(AdamConfig {
            learning_rate: lr,
            ..Default::default()
        });
        let mut reached = None;
        for step in 1..=500 {
            let g = x;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(step));
            let vh = v / (1.0 - b2.powi(step));
            x -= lr * mh / (vh.sqrt() + eps);

            let cur = s.get("x").unwrap().values[0];
            s.get_mut("x").unwrap().grad = Some(vec![cur]);
            optimizer_step(&mut s, &mut st).unwrap();
            assert_eq!(s.get("x").unwrap().values[0], x);
            if reached.is_none() && x.abs() < 0.05 {
                reached = Some(step);
            }
        }
        assert!(reached.is_some());
    }
}
