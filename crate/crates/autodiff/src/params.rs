//! Named parameter collections and their binding onto a tape.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::real::Real;
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// Gradient per parameter name.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

/// Ordered name -> tensor map. Iteration order is the lexical name order, so
/// anything derived from a store (checkpoints, optimizer sweeps) is stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Tensor<T>>,
}

/// Tape handles for the parameters of one forward pass.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not bound"))
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Collects the gradients of every bound parameter by name.
    pub fn collect<T: Real>(&self, mut grads: Gradients<T>) -> GradMap<T> {
        self.vars
            .iter()
            .filter_map(|(name, &v)| grads.take(v).map(|g| (name.clone(), g)))
            .collect()
    }
}

impl FromIterator<(String, Var)> for Bound {
    fn from_iter<I: IntoIterator<Item = (String, Var)>>(iter: I) -> Self {
        Bound {
            vars: iter.into_iter().collect(),
        }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut tensor: Tensor<T>) {
        tensor.requires_grad = true;
        self.params.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Records every parameter whose name starts with one of `prefixes` as a
    /// gradient-requiring leaf. An empty prefix list binds everything.
    pub fn bind(&self, tape: &mut Tape<T>, prefixes: &[&str]) -> Bound {
        let vars = self
            .params
            .iter()
            .filter(|(name, _)| prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)))
            .map(|(name, t)| (name.clone(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    /// Like [`ParamStore::bind`] but records plain constants, for inference.
    pub fn bind_frozen(&self, tape: &mut Tape<T>, prefixes: &[&str]) -> Bound {
        let vars = self
            .params
            .iter()
            .filter(|(name, _)| prefixes.is_empty() || prefixes.iter().any(|p| name.starts_with(p)))
            .map(|(name, t)| (name.clone(), tape.constant(t.clone())))
            .collect();
        Bound { vars }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| {
                    let mut c = v.cast::<U>();
                    c.requires_grad = true;
                    (k.clone(), c)
                })
                .collect(),
        }
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.params.retain(|k, _| keep(k));
    }

    /// Replaces a parameter's values, keeping its shape.
    pub fn set_data(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| crate::AutodiffError::UnknownParam(name.to_string()))?;
        let fresh = Tensor::new(slot.shape().to_vec(), data)?;
        *slot = fresh.with_grad();
        Ok(())
    }
}
