//! Adaptive-moment optimizer over a [`ParamStore`].

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.values.len()]).collect();
        AdamState {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected update of every trainable tensor, then clear gradients.
pub fn sgd_adam_step(store: &mut ParamStore, lr: f64, state: &mut AdamState) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Shape("optimizer state does not match parameter store".into()));
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t as i32);
    let c2 = 1.0 - BETA2.powi(state.t as i32);
    let (tensors, grads) = store.parts_mut();
    for (i, t) in tensors.iter_mut().enumerate() {
        if !t.trainable {
            continue;
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, w) in t.values.iter_mut().enumerate() {
            let g = grads[i][j];
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= lr * mh / (vh.sqrt() + EPSILON);
            if !w.is_finite() {
                return Err(Error::NonFinite { index: j });
            }
        }
    }
    store.zero_grad();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::params::Tensor;

    fn scalar(w: f64) -> ParamStore {
        ParamStore::new(vec![
            Tensor::new("meta.x", vec![1], vec![5.0], false).unwrap(),
            Tensor::new("w", vec![1], vec![w], true).unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar(1.5);
        let mut st = AdamState::new(&s);
        for _ in 0..5 {
            sgd_adam_step(&mut s, 0.1, &mut st).unwrap();
        }
        assert_eq!(s.tensors()[1].values[0], 1.5);
    }

    #[test]
    fn moves_against_constant_gradient() {
        let mut s = scalar(0.0);
        let mut st = AdamState::new(&s);
        for _ in 0..50 {
            s.grad_mut(1)[0] = 2.0;
            s.grad_mut(0)[0] = 2.0;
            sgd_adam_step(&mut s, 0.01, &mut st).unwrap();
            assert_eq!(s.grad(1)[0], 0.0);
        }
        let w = s.tensors()[1].values[0];
        assert!(w < -0.4 && w > -0.51, "{w}");
        assert_eq!(s.tensors()[0].values[0], 5.0);
    }

    #[test]
    fn square_probe_steps_toward_minimum() {
        // f(w) = w², one step from w = 1: m̂ = g, v̂ = g², so w ← 1 - 0.1·g/(|g| + ε)
        let mut s = scalar(1.0);
        let mut st = AdamState::new(&s);
        s.grad_mut(1)[0] = 2.0;
        sgd_adam_step(&mut s, 0.1, &mut st).unwrap();
        let w = s.tensors()[1].values[0];
        assert!(w.abs() < 1.0);
        assert!((w - (1.0 - 0.1 * 2.0 / (2.0 + EPSILON))).abs() < 1e-15);
    }
}
