use std::collections::HashMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::{Scalar, Tensor};
use super::NumError;

/// Ordered collection of uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), index: HashMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<(), NumError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumError::DuplicateName(name));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(move |i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn by_index(&self, i: usize) -> (&str, &Tensor<T>) {
        let (n, t) = &self.entries[i];
        (n, t)
    }

    pub fn element_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Same names, every tensor zeroed.
    pub fn zeros_like(&self) -> Self {
        let mut out = ParamSet::new();
        for (n, t) in self.iter() {
            out.insert(n, Tensor::zeros(t.shape())).expect("names already unique");
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
            index: self.index.clone(),
        }
    }

    /// Records every tensor on `tape` as a leaf; returned vars follow insertion order.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Result<Vec<Var>, NumError> {
        self.entries.iter().map(|(_, t)| tape.leaf(t.clone(), requires_grad)).collect()
    }

    /// Like [`bind`](Self::bind) with one element shifted by `delta`.
    pub fn bind_perturbed(
        &self,
        tape: &mut Tape<T>,
        param: usize,
        element: usize,
        delta: T,
    ) -> Result<Vec<Var>, NumError> {
        let mut vars = Vec::with_capacity(self.entries.len());
        for (i, (_, t)) in self.entries.iter().enumerate() {
            let mut t = t.clone();
            if i == param {
                let slot = &mut t.data_mut()[element];
                *slot = *slot + delta;
            }
            vars.push(tape.leaf(t, false)?);
        }
        Ok(vars)
    }

    /// Collects gradients for vars produced by [`bind`](Self::bind).
    pub fn gradients(&self, tape: &Tape<T>, grads: &Gradients<T>, vars: &[Var]) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .zip(vars)
                .map(|((n, _), &v)| (n.clone(), grads.get_or_zeros(v, tape)))
                .collect(),
            index: self.index.clone(),
        }
    }
}
