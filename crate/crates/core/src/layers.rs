//! Parameterised building blocks shared by encoders and prediction heads.

use crate::rng::Rng;
use crate::tensor::{BufferId, Graph, Mode, ParamId, ParamStore, Tensor, Var, BN_EPS, BN_MOMENTUM, LN_EPS};
use crate::{Error, Result};

/// Affine map `x·W + b` over the last axis; `W` is stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.weight"), &[input, output], input, rng)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[output]))?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn param_count(input: usize, output: usize) -> usize {
        input * output + output
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.tape.shape(x).to_vec();
        if shape.last() != Some(&self.input) {
            return Err(Error::Dimension(format!(
                "linear layer expects width {}, got shape {shape:?}",
                self.input
            )));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            g.tape.reshape(x, &[rows, self.input])?
        };
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let y = g.tape.matmul(flat, w)?;
        let y = g.tape.add(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out = shape;
            *out.last_mut().unwrap() = self.output;
            g.tape.reshape(y, &out)
        }
    }
}

/// Batch normalisation over features of `[N, F]` inputs (or per channel of
/// `[B, T, F]` inputs, statistics pooled over batch and time).
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub features: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[features]))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]))?,
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[features]))?,
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[features]))?,
            features,
        })
    }

    pub fn param_count(features: usize) -> usize {
        2 * features
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.tape.shape(x).to_vec();
        if shape.last() != Some(&self.features) {
            return Err(Error::Dimension(format!(
                "batch norm expects {} features, got shape {shape:?}",
                self.features
            )));
        }
        let rows = shape[..shape.len() - 1].iter().product::<usize>();
        let flat = if shape.len() == 2 {
            x
        } else {
            g.tape.reshape(x, &[rows, self.features])?
        };
        let (gamma, beta) = (g.param(self.gamma), g.param(self.beta));
        let y = match g.mode() {
            Mode::Train => {
                let (y, mean, var) = g.tape.batch_norm_train(flat, gamma, beta, BN_EPS)?;
                let store = g.store_mut();
                for (r, m) in store.buffer_mut(self.running_mean).data_mut().iter_mut().zip(&mean) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
                }
                for (r, v) in store.buffer_mut(self.running_var).data_mut().iter_mut().zip(&var) {
                    *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
                }
                y
            }
            Mode::Infer => {
                let mean = g.store().buffer(self.running_mean).clone();
                let inv = g.store().buffer(self.running_var).map(|v| 1.0 / (v + BN_EPS).sqrt());
                let (m, s) = (g.input(mean), g.input(inv));
                let c = g.tape.sub(flat, m)?;
                let n = g.tape.mul(c, s)?;
                let n = g.tape.mul(n, gamma)?;
                g.tape.add(n, beta)?
            }
        };
        if shape.len() == 2 {
            Ok(y)
        } else {
            g.tape.reshape(y, &shape)
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("layer norm width must be positive".into()));
        }
        Ok(Self {
            gain: store.add(format!("{name}.gain"), Tensor::ones(&[dim]))?,
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.tape.layer_norm(x, gain, bias, LN_EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn batch_norm_infer_with_default_running_stats_is_affine_identity() {
        let mut s = ParamStore::new();
        let bn = BatchNorm::new(&mut s, "bn", 2).unwrap();
        let mut g = Graph::new(&mut s, Mode::Infer, None);
        let x = g.input(Tensor::matrix(&[&[0.5, -2.0]]).unwrap());
        let y = bn.forward(&mut g, x).unwrap();
        let d = g.tape.value(y).data().to_vec();
        assert!((d[0] - 0.5 / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
        assert!((d[1] + 2.0 / (1.0 + BN_EPS).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn batch_norm_updates_running_statistics() {
        let mut s = ParamStore::new();
        let bn = BatchNorm::new(&mut s, "bn", 1).unwrap();
        {
            let mut g = Graph::new(&mut s, Mode::Train, None);
            let x = g.input(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
            bn.forward(&mut g, x).unwrap();
        }
        assert!((s.buffer(bn.running_mean).data()[0] - 0.2).abs() < 1e-15);
        assert!((s.buffer(bn.running_var).data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn linear_handles_rank_three_inputs() {
        let mut s = ParamStore::new();
        let mut r = rng::stream(0, "lin");
        let lin = Linear::new(&mut s, "l", 3, 2, &mut r).unwrap();
        assert_eq!(s.count(), Linear::param_count(3, 2));
        let mut g = Graph::new(&mut s, Mode::Infer, None);
        let x = g.input(Tensor::zeros(&[4, 5, 3]));
        let y = lin.forward(&mut g, x).unwrap();
        assert_eq!(g.tape.shape(y), &[4, 5, 2]);
    }
}
