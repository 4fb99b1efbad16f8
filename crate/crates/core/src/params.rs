//! Named, ordered parameter storage shared by the model and the optimizer.

use std::collections::HashMap;
use std::sync::Arc;

use crate::autograd::Gradients;
use crate::error::{HclError, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Coarse role of a parameter, used to select adaptation subsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Affine scale of a normalization layer.
    NormScale,
    /// Affine shift of a normalization layer.
    NormShift,
    /// Learnable tokens and embeddings.
    Token,
    Scalar,
}

impl ParamKind {
    pub fn is_norm_affine(self) -> bool {
        matches!(self, ParamKind::NormScale | ParamKind::NormShift)
    }
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    value: Arc<Tensor>,
    pub grad: Option<Tensor>,
    pub requires_grad: bool,
}

impl Param {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn shared_value(&self) -> Arc<Tensor> {
        Arc::clone(&self.value)
    }

    pub fn value_mut(&mut self) -> &mut Tensor {
        Arc::make_mut(&mut self.value)
    }
}

/// Point-in-time copy of every parameter value, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot(Vec<Arc<Tensor>>);

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            kind,
            value: Arc::new(value),
            grad: None,
            requires_grad: true,
        });
        id
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Restricts gradient tracking to the parameters accepted by `keep`.
    pub fn set_trainable(&mut self, keep: impl Fn(&Param) -> bool) {
        for p in &mut self.params {
            p.requires_grad = keep(p);
        }
    }

    /// Adds the parameter gradients from one backward pass into each
    /// parameter's accumulator.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.param_grads() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b),
                None => {
                    p.grad = Some(Tensor::from_parts(p.value.shape().to_vec(), g.to_vec()));
                }
            }
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(self.params.iter().map(Param::shared_value).collect())
    }

    pub fn restore(&mut self, snap: &Snapshot) -> Result<()> {
        if snap.0.len() != self.params.len() {
            return Err(HclError::contract(format!(
                "snapshot holds {} parameters, store has {}",
                snap.0.len(),
                self.params.len()
            )));
        }
        for (p, v) in self.params.iter_mut().zip(&snap.0) {
            if p.value.shape() != v.shape() {
                return Err(HclError::shape("restore", p.name.clone()));
            }
            p.value = Arc::clone(v);
            p.grad = None;
        }
        Ok(())
    }

    /// True when every value is bit-identical to the snapshot.
    pub fn matches(&self, snap: &Snapshot) -> bool {
        snap.0.len() == self.params.len()
            && self
                .params
                .iter()
                .zip(&snap.0)
                .all(|(p, v)| {
                    p.value.shape() == v.shape()
                        && p
                            .value
                            .data()
                            .iter()
                            .zip(v.data())
                            .all(|(a, b)| a.to_bits() == b.to_bits())
                })
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(HclError::shape(
                "set_value",
                format!("{}: {:?} vs {:?}", p.name, p.value.shape(), value.shape()),
            ));
        }
        p.value = Arc::new(value);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_restore_round_trips_bitwise() {
        let mut store = ParamStore::new();
        let id = store.add("w", ParamKind::Weight, Tensor::full([3], 0.1));
        let snap = store.snapshot();
        store.get_mut(id).value_mut().data_mut()[1] = 7.0;
        assert!(!store.matches(&snap));
        store.restore(&snap).unwrap();
        assert!(store.matches(&snap));
        assert_eq!(store.value(id).data(), &[0.1, 0.1, 0.1]);
    }

    #[test]
    #[should_panic(expected = "duplicate")]
    fn duplicate_names_rejected() {
        let mut store = ParamStore::new();
        store.add("a", ParamKind::Bias, Tensor::zeros([1]));
        store.add("a", ParamKind::Bias, Tensor::zeros([1]));
    }
}
