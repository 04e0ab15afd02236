use std::collections::HashMap;

use crate::error::{arg_err, Result};
use crate::{Scalar, Tape, Tensor, Var};

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    lookup: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return arg_err("ParamStore::register", format!("parameter `{name}` registered twice"));
        }
        let id = self.tensors.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count over all tensors.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<S>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter_mut())
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.param(t)).collect(),
        }
    }

    /// Records every parameter as a constant; no backward closures are kept.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<S>) -> Bound<'t, S> {
        Bound {
            vars: self.tensors.iter().map(|t| tape.constant(t)).collect(),
        }
    }

    /// Converts every tensor to another element type.
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }
}

/// Parameters recorded on one tape, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound<'t, S> {
    vars: Vec<Var<'t, S>>,
}

impl<'t, S: Scalar> Bound<'t, S> {
    /// Wraps caller-recorded variables, one per parameter in registration order.
    pub fn from_vars(vars: Vec<Var<'t, S>>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, S> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, S>] {
        &self.vars
    }
}
