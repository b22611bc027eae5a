use std::collections::HashMap;

use rand::RngExt;

use super::array::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub(crate) usize);

/// Learnable tensor with a hierarchical name such as
/// `encoder.optical.layer1.weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Non-learnable state (batch-norm running statistics).
#[derive(Debug, Clone, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub value: Tensor,
}

/// Named parameters and buffers of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Parameter>,
    buffers: Vec<Buffer>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name `{name}`")));
        }
        let grad = Tensor::zeros(value.shape());
        self.names.insert(name.clone(), self.params.len());
        self.params.push(Parameter { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name `{name}`")));
        }
        self.buffer_names.insert(name.clone(), self.buffers.len());
        self.buffers.push(Buffer { name, value });
        Ok(BufferId(self.buffers.len() - 1))
    }

    /// Fan-in scaled uniform weights, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(name, Tensor::new(shape.to_vec(), data)?)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).copied().map(ParamId)
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].value
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Tensor {
        &mut self.buffers[id.0].value
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer] {
        &mut self.buffers
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Sum of element counts over learnable parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Element count of parameters whose name starts with `prefix`.
    pub fn count_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Copies values of every parameter and buffer present in `other` under
    /// the same name and shape. Returns the number of tensors copied.
    pub fn copy_from(&mut self, other: &ParamStore, rename: impl Fn(&str) -> String) -> usize {
        let mut copied = 0;
        for p in &other.params {
            if let Some(&i) = self.names.get(&rename(&p.name)) {
                if self.params[i].value.shape() == p.value.shape() {
                    self.params[i].value = p.value.clone();
                    copied += 1;
                }
            }
        }
        for b in &other.buffers {
            if let Some(&i) = self.buffer_names.get(&rename(&b.name)) {
                if self.buffers[i].value.shape() == b.value.shape() {
                    self.buffers[i].value = b.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }
}
