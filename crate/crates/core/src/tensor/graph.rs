use std::collections::HashMap;

use rand::RngExt;

use super::array::Tensor;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// One forward pass: a fresh tape bound to a parameter store.
///
/// Each parameter enters the tape as a single leaf, so every use of it
/// (e.g. an encoder shared by two branches) accumulates into one gradient.
pub struct Graph<'s> {
    pub tape: Tape,
    store: &'s mut ParamStore,
    leaves: HashMap<ParamId, Var>,
    mode: Mode,
    rng: Option<&'s mut Rng>,
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s mut ParamStore, mode: Mode, rng: Option<&'s mut Rng>) -> Self {
        Self {
            tape: Tape::new(),
            store,
            leaves: HashMap::new(),
            mode,
            rng,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let v = self.tape.variable(self.store.get(id).value.clone());
        self.leaves.insert(id, v);
        v
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; identity in
    /// infer mode.
    pub fn dropout(&mut self, x: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        if self.mode == Mode::Infer || p == 0.0 {
            return Ok(x);
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::Contract("train-mode dropout needs a random stream".into()))?;
        let shape = self.tape.shape(x).to_vec();
        let keep = 1.0 / (1.0 - p);
        let mask = dropout_mask(rng, shape.iter().product(), p, keep);
        let m = self.tape.constant(Tensor::new(shape, mask)?);
        self.tape.mul(x, m)
    }

    /// Runs backward from `loss` and adds the resulting gradients into the
    /// store's gradient buffers.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)?;
        for (&id, &v) in &self.leaves {
            if let Some(g) = self.tape.grad(v) {
                self.store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(())
    }
}

pub(crate) fn dropout_mask(rng: &mut Rng, n: usize, p: f64, keep: f64) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect()
}
