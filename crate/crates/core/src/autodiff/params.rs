use std::collections::BTreeMap;

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors. Iteration order is the lexicographic name order,
/// which fixes the layout of checkpoints and the order of optimizer updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    /// Inserts a tensor with entries drawn uniformly from `[-scale, scale]`.
    pub fn insert_uniform<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        scale: f64,
        rng: &mut R,
    ) {
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..=scale);
        }
        self.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Sets every entry of every tensor to zero.
    pub fn zero_all(&mut self) {
        for t in self.tensors.values_mut() {
            t.data_mut().fill(0.0);
        }
    }

    /// Merges another store in; names must not collide.
    pub fn extend(&mut self, other: ParameterStore) -> Result<()> {
        for (name, t) in other.tensors {
            if self.tensors.contains_key(&name) {
                return Err(Error::Config(format!("duplicate parameter `{name}`")));
            }
            self.tensors.insert(name, t);
        }
        Ok(())
    }
}

/// Gradients keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamGrads {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamGrads {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero gradients shaped like every tensor in `store`.
    pub fn zeros_like(store: &ParameterStore) -> Self {
        ParamGrads {
            tensors: store
                .iter()
                .map(|(k, t)| (k.to_string(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Keeps exactly the names present in `store`, filling absent ones with zeros.
    pub fn restricted_to(&self, store: &ParameterStore) -> ParamGrads {
        ParamGrads {
            tensors: store
                .iter()
                .map(|(k, t)| {
                    let g = self
                        .tensors
                        .get(k)
                        .cloned()
                        .unwrap_or_else(|| Tensor::zeros(t.shape()));
                    (k.to_string(), g)
                })
                .collect(),
        }
    }

    /// Elementwise `self += other`; names missing on either side are taken as zero.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        for (name, g) in &other.tensors {
            match self.tensors.get_mut(name) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.tensors.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors.values_mut() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    /// Largest absolute entry across all gradients.
    pub fn max_abs(&self) -> f64 {
        self.tensors
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restricted_to_fills_missing_with_zeros() {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::vector(vec![1.0, 2.0]));
        store.insert("b", Tensor::scalar(3.0));
        let mut grads = ParamGrads::new();
        grads.insert("a", Tensor::vector(vec![0.5, 0.5]));
        grads.insert("other", Tensor::scalar(9.0));
        let r = grads.restricted_to(&store);
        assert_eq!(r.len(), 2);
        assert_eq!(r.get("b").unwrap().data(), &[0.0]);
        assert!(r.get("other").is_none());
    }

    #[test]
    fn extend_rejects_collisions() {
        let mut a = ParameterStore::new();
        a.insert("x", Tensor::scalar(1.0));
        let mut b = ParameterStore::new();
        b.insert("x", Tensor::scalar(2.0));
        assert!(a.extend(b).is_err());
    }
}
