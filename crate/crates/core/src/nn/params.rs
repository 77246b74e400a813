use std::ops::Index;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

/// Tape handles for every tensor of a [`ParamSet`], in set order.
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bound {
    /// Copy of this binding with `id` routed to `var` instead.
    pub fn with(&self, id: ParamId, var: Var) -> Bound {
        let mut b = self.clone();
        b.0[id.0] = var;
        b
    }
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        self.entries.push((name.into(), tensor.with_grad()));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].1
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].1
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name).map(ParamId)
    }

    pub fn require(&self, name: &str) -> Result<ParamId> {
        self.find(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Places every tensor on `tape`. Frozen bindings produce leaves that
    /// never receive gradient.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        Bound(
            self.entries
                .iter()
                .map(|(_, t)| {
                    let mut t = t.clone();
                    t.set_requires_grad(trainable);
                    tape.input(t)
                })
                .collect(),
        )
    }

    /// Adds the gradients held by `tape` for a trainable binding.
    pub fn accumulate_grads(&mut self, tape: &Tape, bound: &Bound) -> Result<()> {
        for ((_, t), &v) in self.entries.iter_mut().zip(&bound.0) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    /// Overwrites the tensor called `name`, keeping it trainable.
    pub fn replace(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let id = self.require(name)?;
        let slot = &mut self.entries[id.0].1;
        if slot.shape() != tensor.shape() {
            return Err(Error::shape("replace", slot.shape(), tensor.shape()));
        }
        *slot = tensor.with_grad();
        Ok(())
    }
}
