//! SGD-with-momentum and Adam. Masked parameter entries (and their state
//! buffers) are re-zeroed after every step so a pruned weight can never
//! resurrect through momentum.

use std::collections::BTreeMap;

use super::net::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam state for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                context: "adam_step".into(),
                detail: format!(
                    "state len {} vs params {} vs grads {}",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }

    fn zero_at(&mut self, mask: &[f64]) {
        for (m, &k) in self.m.iter_mut().zip(mask) {
            *m *= k;
        }
        for (v, &k) in self.v.iter_mut().zip(mask) {
            *v *= k;
        }
    }
}

/// SGD with classical momentum over a network's named parameters.
#[derive(Debug, Default)]
pub struct Sgd {
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Sgd {
    pub fn new() -> Self {
        Sgd::default()
    }

    /// `p -= lr * v` with `v = momentum * v + g`. Masked entries of both the
    /// parameter and its velocity buffer are zeroed afterwards.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        momentum: f64,
    ) -> Result<()> {
        if lr <= 0.0 {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!("momentum must be in [0, 1), got {momentum}")));
        }
        let masks: BTreeMap<String, Vec<f64>> =
            net.masks().iter().map(|(k, m)| (k.clone(), m.data().to_vec())).collect();
        for (name, grad) in grads {
            let param = net
                .params_mut()
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no parameter named '{name}'")))?;
            if grad.len() != param.len() {
                return Err(Error::Shape {
                    context: format!("sgd_step '{name}'"),
                    detail: "gradient/parameter length mismatch".into(),
                });
            }
            let vel = self.velocity.entry(name.clone()).or_insert_with(|| vec![0.0; param.len()]);
            let p = param.data_mut();
            for i in 0..p.len() {
                vel[i] = momentum * vel[i] + grad.data()[i];
                p[i] -= lr * vel[i];
            }
            if let Some(mask) = masks.get(name) {
                for i in 0..p.len() {
                    p[i] *= mask[i];
                    vel[i] *= mask[i];
                }
            }
            if !param.all_finite() {
                return Err(Error::NonFinite(format!("parameter '{name}' after sgd_step")));
            }
        }
        Ok(())
    }
}

/// Adam over a network's named parameters, mask-aware like [`Sgd`].
#[derive(Debug, Default)]
pub struct Adam {
    state: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new() -> Self {
        Adam::default()
    }

    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<()> {
        let masks: BTreeMap<String, Vec<f64>> =
            net.masks().iter().map(|(k, m)| (k.clone(), m.data().to_vec())).collect();
        for (name, grad) in grads {
            let param = net
                .params_mut()
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no parameter named '{name}'")))?;
            let state = self.state.entry(name.clone()).or_insert_with(|| AdamState::new(param.len()));
            state.step(param.data_mut(), grad.data(), lr)?;
            if let Some(mask) = masks.get(name) {
                let p = param.data_mut();
                for i in 0..p.len() {
                    p[i] *= mask[i];
                }
                state.zero_at(mask);
            }
            if !param.all_finite() {
                return Err(Error::NonFinite(format!("parameter '{name}' after adam_step")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param_net() -> Network {
        use super::super::net::Padding;
        Network::builder(1).conv(1, 1, Padding::Valid).global_avg_pool().build(0).unwrap()
    }

    #[test]
    fn sgd_without_momentum_moves_by_lr_times_grad() {
        let mut net = one_param_net();
        net.params_mut().get_mut("conv1.weight").unwrap().data_mut()[0] = 1.0;
        let mut grads = BTreeMap::new();
        grads.insert("conv1.weight".to_string(), Tensor::new(vec![1, 1, 1, 1], vec![2.0]).unwrap());
        let mut opt = Sgd::new();
        opt.step(&mut net, &grads, 0.1, 0.0).unwrap();
        let w = net.params()["conv1.weight"].data()[0];
        assert!((w - (1.0 - 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn masked_entry_stays_zero_under_nonzero_gradient() {
        let mut net = one_param_net();
        net.params_mut().get_mut("conv1.weight").unwrap().data_mut()[0] = 0.7;
        net.set_mask("conv1.weight", Tensor::new(vec![1, 1, 1, 1], vec![0.0]).unwrap()).unwrap();
        assert_eq!(net.params()["conv1.weight"].data()[0], 0.0);

        let mut grads = BTreeMap::new();
        grads.insert("conv1.weight".to_string(), Tensor::new(vec![1, 1, 1, 1], vec![5.0]).unwrap());
        let mut sgd = Sgd::new();
        for _ in 0..10 {
            sgd.step(&mut net, &grads, 0.1, 0.9).unwrap();
            assert_eq!(net.params()["conv1.weight"].data()[0], 0.0);
        }
        let mut adam = Adam::new();
        for _ in 0..10 {
            adam.step(&mut net, &grads, 0.05).unwrap();
            assert_eq!(net.params()["conv1.weight"].data()[0], 0.0);
        }
    }

    #[test]
    fn adam_minimizes_square_from_one() {
        // independent scalar recurrence for f(w) = w^2, lr 0.05
        let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
        let mut w_ref = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=500u32 {
            let g = 2.0 * w_ref;
            m = beta1 * m + (1.0 - beta1) * g;
            v = beta2 * v + (1.0 - beta2) * g * g;
            let m_hat = m / (1.0 - beta1.powi(t as i32));
            let v_hat = v / (1.0 - beta2.powi(t as i32));
            w_ref -= 0.05 * m_hat / (v_hat.sqrt() + eps);
        }
        assert!(w_ref.abs() < 1e-3, "reference recurrence should converge, got {w_ref}");

        let mut state = AdamState::new(1);
        let mut w = vec![1.0f64];
        for _ in 0..500 {
            let g = vec![2.0 * w[0]];
            state.step(&mut w, &g, 0.05).unwrap();
        }
        assert_eq!(w[0], w_ref, "engine Adam must match the scalar recurrence exactly");
        assert!(w[0].abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let mut net = one_param_net();
        let grads = BTreeMap::new();
        assert!(Sgd::new().step(&mut net, &grads, 0.0, 0.5).is_err());
        assert!(Sgd::new().step(&mut net, &grads, 0.1, 1.0).is_err());
        assert!(AdamState::new(1).step(&mut [0.0], &[0.0], -1.0).is_err());
    }
}
