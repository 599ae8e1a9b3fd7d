use std::collections::HashMap;

use super::{Graph, Tensor, Var};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named tensor owned by a model. Non-trainable entries are buffers such
/// as batch-norm running statistics.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

/// Insertion-ordered collection of named parameters and their gradients.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            value,
            grad,
            trainable,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds gradients produced by a finished session.
    pub fn accumulate_grads(&mut self, grads: Vec<(ParamId, Tensor)>) {
        for (id, g) in grads {
            let p = &mut self.params[id.0];
            p.grad
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, b)| *a += b);
        }
    }

    pub fn apply_buffer_updates(&mut self, updates: Vec<(ParamId, Tensor)>) {
        for (id, v) in updates {
            self.params[id.0].value = v;
        }
    }

    /// Replaces a value after checking the shape.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(invalid(format!(
                "parameter {} has shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }
}

/// One forward pass over a [`ParamStore`].
///
/// Parameters are bound into the graph lazily, the first time a layer asks
/// for them, so unused parameters never appear in the recording.
pub struct Session<'a> {
    pub graph: Graph,
    store: &'a ParamStore,
    bound: Vec<Option<Var>>,
    training: bool,
    buffer_updates: Vec<(ParamId, Tensor)>,
}

impl<'a> Session<'a> {
    pub fn new(store: &'a ParamStore, training: bool) -> Self {
        Self {
            graph: Graph::new(),
            store,
            bound: vec![None; store.len()],
            training,
            buffer_updates: Vec::new(),
        }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.store.get(id);
        let v = self.graph.leaf(p.value.clone(), p.trainable);
        self.bound[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: ParamId) -> &'a Tensor {
        &self.store.get(id).value
    }

    pub fn update_buffer(&mut self, id: ParamId, value: Tensor) {
        self.buffer_updates.push((id, value));
    }

    /// Runs backward and collects gradients for every bound trainable
    /// parameter.
    pub fn backward(&mut self, loss: Var) -> Result<Vec<(ParamId, Tensor)>> {
        self.graph.backward(loss)?;
        Ok(self
            .bound
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let v = (*v)?;
                self.graph.grad(v).map(|g| (ParamId(i), g))
            })
            .collect())
    }

    pub fn take_buffer_updates(&mut self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut self.buffer_updates)
    }
}
