//! AdamW with decoupled weight decay.

use crate::error::{HclError, Result};
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Moment accumulators and step counter for every parameter of a store.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    step: u64,
    moments: Vec<Option<Moments>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Self {
        OptimizerState {
            config,
            step: 0,
            moments: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every trainable parameter of `store` from its accumulated
    /// gradient. Trainable parameters without a gradient are an error.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.requires_grad && p.grad.is_none()) {
            return Err(HclError::contract(format!(
                "parameter {} is trainable but has no gradient",
                p.name
            )));
        }
        if self.moments.len() < store.len() {
            self.moments.resize(store.len(), None);
        }
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.requires_grad {
                continue;
            }
            let grad = p.grad.take().expect("checked above");
            let n = grad.numel();
            let mom = self.moments[id.0].get_or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if mom.m.len() != n {
                return Err(HclError::shape("adamw_step", p.name.clone()));
            }
            let value = p.value_mut().data_mut();
            for (k, &g) in grad.data().iter().enumerate() {
                value[k] -= c.lr * c.weight_decay * value[k];
                mom.m[k] = c.beta1 * mom.m[k] + (1.0 - c.beta1) * g;
                mom.v[k] = c.beta2 * mom.v[k] + (1.0 - c.beta2) * g * g;
                let m_hat = mom.m[k] / bc1;
                let v_hat = mom.v[k] / bc2;
                value[k] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamKind;
    use crate::tensor::Tensor;

    fn single(value: f64, grad: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", ParamKind::Weight, Tensor::full([1], value));
        s.get_mut(id).grad = Some(Tensor::full([1], grad));
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02] {
            let mut s = single(0.5, g);
            let mut opt = OptimizerState::new(AdamWConfig {
                weight_decay: 0.0,
                ..Default::default()
            });
            opt.step(&mut s).unwrap();
            let delta = s.value(crate::ParamId(0)).item() - 0.5;
            assert!(delta.abs() <= 1e-3 && delta.abs() >= 0.99e-3);
            assert_eq!(delta.signum(), -g.signum());
        }
    }

    #[test]
    fn zero_grad_without_decay_is_fixed_point() {
        let mut s = single(0.7, 0.0);
        let mut opt = OptimizerState::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut s).unwrap();
        assert_eq!(s.value(crate::ParamId(0)).item(), 0.7);
    }

    #[test]
    fn decoupled_decay() {
        let mut s = single(1.0, 0.0);
        let mut opt = OptimizerState::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..Default::default()
        });
        opt.step(&mut s).unwrap();
        assert!((s.value(crate::ParamId(0)).item() - 0.999).abs() < 1e-15);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn missing_gradient_is_rejected() {
        let mut s = ParamStore::new();
        s.add("p", ParamKind::Weight, Tensor::zeros([2]));
        let mut opt = OptimizerState::new(AdamWConfig::default());
        assert!(matches!(opt.step(&mut s), Err(HclError::Contract(_))));
        assert_eq!(opt.steps(), 0);
    }
}
