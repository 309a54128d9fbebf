use std::collections::HashMap;
use std::ops::Index;

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered registry of named trainable tensors and their gradients.
///
/// Gradients start out absent. They are filled by [`ParamStore::accumulate`]
/// after a backward pass and cleared by [`ParamStore::zero_grad`].
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
    lookup: HashMap<String, ParamId>,
}

/// Graph leaves for every parameter of a store, in registration order.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<Var>);

impl Index<ParamId> for Bindings {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

impl Bindings {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.lookup.contains_key(&name) {
            return Err(TensorError::contract(format!("duplicate parameter {name}")));
        }
        if !value.is_finite() {
            return Err(TensorError::contract(format!("parameter {name} is not finite")));
        }
        let id = ParamId(self.values.len());
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        self.grads.push(None);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    /// Replaces a value, keeping the registered shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let current = &self.values[id.0];
        if current.shape() != value.shape() {
            return Err(TensorError::shape("set", current.shape(), value.shape()));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn grad_mut(&mut self, id: ParamId) -> Option<&mut Tensor> {
        self.grads[id.0].as_mut()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Inserts every parameter into `graph` as a gradient-tracking leaf.
    pub fn bind(&self, graph: &mut Graph) -> Result<Bindings> {
        self.values
            .iter()
            .map(|v| graph.param(v.clone()))
            .collect::<Result<Vec<_>>>()
            .map(Bindings)
    }

    /// Adds the leaf gradients of a finished backward pass into the store.
    /// Parameters that the loss did not reach receive explicit zeros.
    pub fn accumulate(&mut self, graph: &Graph, bindings: &Bindings) {
        for (i, var) in bindings.0.iter().enumerate() {
            let g = graph.grad(*var);
            match (&mut self.grads[i], g) {
                (Some(acc), Some(g)) => acc.add_assign(g),
                (slot @ None, Some(g)) => *slot = Some(g.clone()),
                (slot @ None, None) => *slot = Some(Tensor::zeros(self.values[i].shape())),
                (Some(_), None) => {}
            }
        }
    }

    /// Global L2 norm of all present gradients.
    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().flatten().map(Tensor::l2_norm_sq).sum::<f64>().sqrt()
    }

    /// Rescales gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
        norm
    }
}
