//! Adam with bias correction.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::{ParamStore, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates aligned with a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }
}

/// One Adam update of every trainable entry of `params`. Buffers are left
/// alone; the step counter advances even when all gradients are zero.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(shape_err(
            "adam_step",
            format!(
                "{} params, {} grads, {} / {} moments",
                params.len(),
                grads.len(),
                state.m.len(),
                state.v.len()
            ),
        ));
    }
    for (i, e) in params.entries().iter().enumerate() {
        let s = e.value.shape();
        if grads[i].shape() != s || state.m[i].shape() != s || state.v[i].shape() != s {
            return Err(shape_err("adam_step", format!("parameter {} shape {s:?}", e.name)));
        }
    }
    state.t += 1;
    let c = state.config;
    let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let corr1 = T::one() / (T::one() - b1.powi(t));
    let corr2 = T::one() / (T::one() - b2.powi(t));
    let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
    for (i, e) in params.entries_mut().iter_mut().enumerate() {
        if !e.trainable {
            continue;
        }
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (k, p) in e.value.data_mut().iter_mut().enumerate() {
            m[k] = b1 * m[k] + one_b1 * g[k];
            v[k] = b2 * v[k] + one_b2 * g[k] * g[k];
            let mhat = m[k] * corr1;
            let vhat = v[k] * corr2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ParamId;

    fn scalar_store(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("p", Tensor::from_vec(&[1], alloc::vec![v]).unwrap());
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = scalar_store(1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut st = AdamState::new(&store, cfg);
        adam_step(&mut store, &[Tensor::full(&[1], 1.0)], &mut st).unwrap();
        assert!((store.get(ParamId(0)).item() - 0.9).abs() < 1e-7);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut store = scalar_store(0.25);
        let mut st = AdamState::new(&store, AdamConfig::default());
        adam_step(&mut store, &[Tensor::zeros(&[1])], &mut st).unwrap();
        assert_eq!(store.get(ParamId(0)).item(), 0.25);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn two_steps_follow_the_recurrence() {
        let (lr, b1, b2, eps, g) = (0.01, 0.9, 0.999, 1e-8, 0.5);
        let mut store = scalar_store(2.0);
        let cfg = AdamConfig { lr, beta1: b1, beta2: b2, eps };
        let mut st = AdamState::new(&store, cfg);
        for _ in 0..2 {
            adam_step(&mut store, &[Tensor::full(&[1], g)], &mut st).unwrap();
        }
        // hand evaluation
        let m1 = (1.0 - b1) * g;
        let v1 = (1.0 - b2) * g * g;
        let p1 = 2.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
        let m2 = b1 * m1 + (1.0 - b1) * g;
        let v2 = b2 * v1 + (1.0 - b2) * g * g;
        let p2 = p1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
        assert!((store.get(ParamId(0)).item() - p2).abs() < 1e-15);
        assert!((st.m[0].item() - m2).abs() < 1e-15 && (st.v[0].item() - v2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = scalar_store(0.0);
        let mut st = AdamState::new(&store, AdamConfig::default());
        assert!(adam_step(&mut store, &[Tensor::zeros(&[2])], &mut st).is_err());
        assert_eq!(st.t, 0);
    }
}
