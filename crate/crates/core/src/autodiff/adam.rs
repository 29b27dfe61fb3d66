use serde::{Deserialize, Serialize};

use super::{AutodiffError, ParamStore, Real, Result, EPS};

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
            eps: EPS,
        }
    }
}

/// First and second moment estimates for every parameter of a store.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| vec![T::zero(); t.numel()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are zeroed afterwards. A non-finite gradient anywhere rejects the whole
    /// step and leaves parameters, moments and gradients untouched.
    pub fn step(&mut self, params: &mut ParamStore<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(AutodiffError::Invalid {
                op: "adam_step",
                msg: format!("state tracks {} parameters, store has {}", self.m.len(), params.len()),
            });
        }
        for (id, name, tensor) in params.iter() {
            if tensor.numel() != self.m[id.0].len() {
                return Err(AutodiffError::Invalid {
                    op: "adam_step",
                    msg: format!("moment shape mismatch for `{name}`"),
                });
            }
            if let Some(g) = tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(AutodiffError::NonFiniteGradient(name.to_string()));
                }
            }
        }

        self.t += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (ib1, ib2) = (T::lit(1.0 - c.beta1), T::lit(1.0 - c.beta2));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        let (inv_bc1, inv_bc2) = (T::lit(1.0 / bc1), T::lit(1.0 / bc2));

        for ((_, tensor), (m, v)) in params.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let Some(g) = tensor.grad().map(<[T]>::to_vec) else {
                // No gradient recorded: treat as zero.
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= b1;
                    *vi *= b2;
                }
                apply(tensor.values_mut(), m, v, lr, eps, inv_bc1, inv_bc2);
                continue;
            };
            for ((mi, vi), gi) in m.iter_mut().zip(v.iter_mut()).zip(&g) {
                *mi = b1 * *mi + ib1 * *gi;
                *vi = b2 * *vi + ib2 * *gi * *gi;
            }
            apply(tensor.values_mut(), m, v, lr, eps, inv_bc1, inv_bc2);
            tensor.zero_grad();
        }
        Ok(())
    }
}

fn apply<T: Real>(p: &mut [T], m: &[T], v: &[T], lr: T, eps: T, inv_bc1: T, inv_bc2: T) {
    for ((pi, mi), vi) in p.iter_mut().zip(m).zip(v) {
        let mhat = *mi * inv_bc1;
        let vhat = *vi * inv_bc2;
        *pi -= lr * mhat / (vhat.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(value: f64) -> (ParamStore<f64>, crate::autodiff::ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("p", Tensor::new(vec![1], vec![value]).unwrap()).unwrap();
        (store, id)
    }

    #[test]
    fn first_step_closed_form() {
        let (mut store, id) = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.get_mut(id).accumulate_grad(&[3.0]);
        adam.step(&mut store).unwrap();
        let expected = -0.001 * 3.0 / (3.0 + 1e-8);
        assert!((store.get(id).values()[0] - expected).abs() < 1e-15);
        assert!((store.get(id).values()[0] + 0.000999).abs() < 1e-6);
        assert_eq!(store.get(id).grad().unwrap(), &[0.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let (mut store, id) = single(0.25);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        for _ in 0..5 {
            store.get_mut(id).accumulate_grad(&[0.0]);
            adam.step(&mut store).unwrap();
        }
        assert_eq!(store.get(id).values()[0], 0.25);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn constant_gradient_steps_are_bounded_by_lr() {
        let (mut store, id) = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        let mut prev = 1.0;
        for _ in 0..2 {
            store.get_mut(id).accumulate_grad(&[-0.7]);
            adam.step(&mut store).unwrap();
            let now = store.get(id).values()[0];
            assert!((now - prev).abs() <= 0.001 * (1.0 + 1e-9));
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_rejects_step_naming_parameter() {
        let (mut store, id) = single(1.0);
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        store.get_mut(id).accumulate_grad(&[f64::NAN]);
        let err = adam.step(&mut store).unwrap_err();
        assert_eq!(err, AutodiffError::NonFiniteGradient("p".into()));
        assert_eq!(store.get(id).values()[0], 1.0);
        assert_eq!(adam.t, 0);
    }
}
