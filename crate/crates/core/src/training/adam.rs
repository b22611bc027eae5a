use crate::tensor::{ParamStore, Tensor};
use crate::{Error, Result};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect::<Vec<_>>();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the gradients held in `store`.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.params().len() != self.m.len() {
            return Err(Error::Contract("optimizer state does not match the parameter store".into()));
        }
        if let Some(p) = store.params().iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient for parameter `{}`", p.name)));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let g = p.grad.data();
            let (m, v) = (m.data_mut(), v.data_mut());
            for (j, w) in p.value.data_mut().iter_mut().enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
