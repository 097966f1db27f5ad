use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use segadapt_tensor::{Array, Grads, Tensor};

use crate::error::{invalid, Result};

/// Named parameter arrays in a fixed (sorted) order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.tensors
            .get(name)
            .map_or_else(|| invalid("parameter", format!("missing {name}")), Ok)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array> {
        match self.tensors.get_mut(name) {
            Some(a) => Ok(a),
            None => invalid("parameter", format!("missing {name}")),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Array::numel).sum()
    }

    /// Parameters whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Fails unless both stores hold the same names with the same shapes.
    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return invalid(
                "parameter layout",
                format!("{} vs {} tensors", self.tensors.len(), other.tensors.len()),
            );
        }
        for ((ka, va), (kb, vb)) in self.tensors.iter().zip(&other.tensors) {
            if ka != kb || va.shape() != vb.shape() {
                return invalid(
                    "parameter layout",
                    format!("{ka} {:?} vs {kb} {:?}", va.shape(), vb.shape()),
                );
            }
        }
        Ok(())
    }
}

/// Graph handles for a [`ParamStore`], used by forward passes.
pub struct Weights {
    map: BTreeMap<String, Tensor>,
}

impl Weights {
    /// Read-only view; builds no autodiff graph.
    pub fn constant(store: &ParamStore) -> Self {
        Self::build(store, Tensor::constant)
    }

    /// Every parameter becomes a differentiable leaf.
    pub fn trainable(store: &ParamStore) -> Self {
        Self::build(store, Tensor::leaf)
    }

    fn build(store: &ParamStore, f: impl Fn(Array) -> Tensor) -> Self {
        Self {
            map: store.tensors.iter().map(|(k, v)| (k.clone(), f(v.clone()))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.map
            .get(name)
            .map_or_else(|| invalid("parameter", format!("missing {name}")), Ok)
    }

    /// Gradient for every parameter, zero where the loss did not depend on it.
    pub fn gradients(&self, grads: &Grads) -> BTreeMap<String, Array> {
        self.map
            .iter()
            .map(|(k, t)| {
                let g = grads.get(t).cloned().unwrap_or_else(|| Array::zeros(t.shape().to_vec()));
                (k.clone(), g)
            })
            .collect()
    }
}

/// Records parameters with their initializers under a name prefix.
pub(crate) struct Init<'a, R: Rng> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut R,
}

impl<R: Rng> Init<'_, R> {
    fn normal(&mut self, name: String, shape: Vec<usize>, std: f64, truncate: bool) {
        let dist = Normal::new(0.0, std).expect("positive std");
        let rng = &mut *self.rng;
        let a = Array::from_fn(shape, |_| loop {
            let v: f64 = dist.sample(rng);
            if !truncate || v.abs() <= 2.0 * std {
                break v;
            }
        });
        self.store.insert(name, a);
    }

    /// Linear layer `(c_in, c_out)`: truncated normal (std 0.02), zero bias.
    pub fn linear(&mut self, prefix: &str, c_in: usize, c_out: usize, bias: bool) {
        self.normal(format!("{prefix}.weight"), vec![c_in, c_out], 0.02, true);
        if bias {
            self.store.insert(format!("{prefix}.bias"), Array::zeros([c_out]));
        }
    }

    /// Convolution `(k, k, c_in, c_out)`: He normal over fan-out, zero bias.
    pub fn conv(&mut self, prefix: &str, k: usize, c_in: usize, c_out: usize, bias: bool) {
        let std = (2.0 / (k * k * c_out) as f64).sqrt();
        self.normal(format!("{prefix}.weight"), vec![k, k, c_in, c_out], std, false);
        if bias {
            self.store.insert(format!("{prefix}.bias"), Array::zeros([c_out]));
        }
    }

    /// Depthwise convolution `(k, k, c)`: He normal with fan-out `k * k`.
    pub fn depthwise(&mut self, prefix: &str, k: usize, c: usize, bias: bool) {
        let std = (2.0 / (k * k) as f64).sqrt();
        self.normal(format!("{prefix}.weight"), vec![k, k, c], std, false);
        if bias {
            self.store.insert(format!("{prefix}.bias"), Array::zeros([c]));
        }
    }

    /// Final pixelwise classifier `(c_in, c_out)`: normal with std 0.01,
    /// zero bias.
    pub fn classifier(&mut self, prefix: &str, c_in: usize, c_out: usize) {
        self.normal(format!("{prefix}.weight"), vec![c_in, c_out], 0.01, false);
        self.store.insert(format!("{prefix}.bias"), Array::zeros([c_out]));
    }

    pub fn norm(&mut self, prefix: &str, c: usize) {
        self.store.insert(format!("{prefix}.weight"), Array::ones([c]));
        self.store.insert(format!("{prefix}.bias"), Array::zeros([c]));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_check_detects_shape_changes() {
        let mut a = ParamStore::new();
        a.insert("x.weight", Array::zeros([2, 3]));
        let mut b = a.clone();
        a.check_same_layout(&b).unwrap();
        b.insert("x.weight", Array::zeros([3, 2]));
        assert!(a.check_same_layout(&b).is_err());
    }

    #[test]
    fn truncated_normal_stays_within_two_std() {
        let mut store = ParamStore::new();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        Init { store: &mut store, rng: &mut rng }.linear("l", 16, 16, true);
        assert!(store.get("l.weight").unwrap().max_abs() <= 0.04);
        assert_eq!(store.get("l.bias").unwrap().sum(), 0.0);
    }
}
