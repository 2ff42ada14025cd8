use super::graph::{Gradients, Graph, Var};
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S: Scalar = f32> {
    entries: Vec<(String, Tensor<S>)>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, mut t: Tensor<S>) -> ParamId {
        let name = name.into();
        assert!(self.entries.iter().all(|(n, _)| *n != name), "duplicate parameter {name}");
        t.requires_grad = true;
        self.entries.push((name, t));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn by_id(&self, id: ParamId) -> &Tensor<S> {
        &self.entries[id.0].1
    }

    pub fn by_id_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.entries[id.0].1
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Records every parameter on `graph`; the returned vars are indexed by [`ParamId`].
    /// With `track = false` the parameters enter as constants (inference).
    pub fn attach(&self, graph: &mut Graph<S>, track: bool) -> Vec<Var> {
        self.entries
            .iter()
            .map(|(_, t)| {
                let mut t = t.clone();
                t.grad = None;
                t.requires_grad = track;
                graph.leaf(t)
            })
            .collect()
    }

    /// Stores gradients from a backward pass onto the parameters, adding to any already present.
    pub fn accumulate_grads(&mut self, grads: &mut Gradients<S>, vars: &[Var]) {
        for ((_, t), &v) in self.entries.iter_mut().zip(vars) {
            let g = grads.take(v).unwrap_or_else(|| vec![S::zero(); t.numel()]);
            match &mut t.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
                slot @ None => *slot = Some(g),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.entries.iter_mut().for_each(|(_, t)| t.grad = None);
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!("expected {} parameters, found {}", self.len(), other.len())));
        }
        for ((name, t), (oname, ot)) in self.entries.iter_mut().zip(&other.entries) {
            if name != oname || t.shape() != ot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: {name}{:?} vs {oname}{:?}",
                    t.shape(),
                    ot.shape()
                )));
            }
            t.data_mut().copy_from_slice(ot.data());
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }
}
