//! Named parameter registry with per-parameter optimizer state.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Persistent non-learned state such as batch-norm running statistics.
    Buffer,
}

/// A named tensor with its gradient slot and ADAM moments.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl Parameter {
    fn new(name: String, kind: ParamKind, value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name,
            kind,
            value,
            grad: None,
            first_moment: Tensor::zeros(&shape),
            second_moment: Tensor::zeros(&shape),
            step: 0,
        }
    }
}

/// Owns every parameter of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::State(format!("parameter `{name}` registered twice")));
        }
        let id = self.params.len();
        self.index.insert(name.clone(), id);
        self.params.push(Parameter::new(name, kind, value));
        Ok(ParamId(id))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Number of learnable scalars.
    pub fn trainable_scalars(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Learnable scalars whose name starts with `prefix`.
    pub fn trainable_scalars_under(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable && p.name.starts_with(prefix))
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Adds the parameter gradients of a finished backward pass into the
    /// store, and folds in any pending batch-norm running-stat updates.
    pub fn absorb(&mut self, graph: &mut Graph) -> Result<()> {
        for (id, grad) in graph.param_grads() {
            let p = &mut self.params[id.0];
            match &mut p.grad {
                Some(acc) => {
                    for (a, g) in acc.data_mut().iter_mut().zip(grad.data()) {
                        *a += g;
                    }
                }
                None => p.grad = Some(grad.clone()),
            }
        }
        self.apply_running_stats(graph)
    }

    /// Applies the running-statistic updates recorded during a training-mode forward.
    pub fn apply_running_stats(&mut self, graph: &mut Graph) -> Result<()> {
        for upd in graph.take_bn_updates() {
            let m = upd.momentum;
            for (id, batch) in [(upd.running_mean, &upd.batch_mean), (upd.running_var, &upd.batch_var)] {
                let p = &mut self.params[id.0];
                if p.value.len() != batch.len() {
                    return Err(Error::dim("running stats", p.value.shape(), &[batch.len()]));
                }
                for (r, b) in p.value.data_mut().iter_mut().zip(batch) {
                    *r = m * *r + (1.0 - m) * b;
                }
            }
        }
        Ok(())
    }
}
