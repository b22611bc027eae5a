use serde::{Deserialize, Serialize};

use crate::layers::Linear;
use crate::tensor::{Graph, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeKind {
    Concat,
    Average,
    Gated,
}

impl std::str::FromStr for MergeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(MergeKind::Concat),
            "average" => Ok(MergeKind::Average),
            "gated" => Ok(MergeKind::Gated),
            _ => Err(Error::Config(format!("unknown merge function `{s}`"))),
        }
    }
}

/// Produces per-sample, per-position weights over views from the
/// concatenated view representations; weights sum to one across views.
#[derive(Debug, Clone)]
pub struct GatedUnit {
    pub gate: Linear,
    pub views: usize,
    pub width: usize,
}

impl GatedUnit {
    /// Zero-initialised, so the first forward pass is an exact average.
    pub fn new(store: &mut ParamStore, prefix: &str, views: usize, gate_input: usize, width: usize) -> Result<Self> {
        let weight = store.add(format!("{prefix}.weight"), Tensor::zeros(&[gate_input, views * width]))?;
        let bias = store.add(format!("{prefix}.bias"), Tensor::zeros(&[views * width]))?;
        Ok(Self {
            gate: Linear {
                weight,
                bias,
                input: gate_input,
                output: views * width,
            },
            views,
            width,
        })
    }

    /// Weights `[B, |V|, width]`, softmax across the view axis.
    pub fn weights(&self, g: &mut Graph, gate_inputs: &[Var]) -> Result<Var> {
        let joint = g.tape.concat(gate_inputs, 1)?;
        let batch = g.tape.shape(joint)[0];
        let logits = self.gate.forward(g, joint)?;
        let logits = g.tape.reshape(logits, &[batch, self.views, self.width])?;
        g.tape.softmax(logits, 1)
    }
}

/// Stacks `[B, W]` tensors into `[B, n, W]`.
fn stack(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let first = tape.shape(xs[0]).to_vec();
    if first.len() != 2 {
        return Err(Error::Merge(format!("merge inputs must be [B, W], got {first:?}")));
    }
    let mut parts = Vec::with_capacity(xs.len());
    for &x in xs {
        if tape.shape(x) != first.as_slice() {
            return Err(Error::Merge(format!(
                "merge inputs disagree: {:?} vs {first:?}",
                tape.shape(x)
            )));
        }
        parts.push(tape.reshape(x, &[first[0], 1, first[1]])?);
    }
    tape.concat(&parts, 1)
}

/// `Σ_v w_v ⊙ x_v` over stacked `[B, |V|, W]` weights.
pub fn weighted_sum(tape: &mut Tape, weights: Var, xs: &[Var]) -> Result<Var> {
    let stacked = stack(tape, xs)?;
    let prod = tape.mul(weights, stacked)?;
    tape.sum(prod, 1)
}

/// Element-wise mean of equal-shape `[B, W]` tensors, written as a weighted
/// sum with weights `1/n` so that it coincides exactly with a gated merge
/// whose weights are uniform.
pub fn average(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    if xs.is_empty() {
        return Err(Error::Merge("average of zero inputs".into()));
    }
    if xs.len() == 1 {
        return Ok(xs[0]);
    }
    let uniform = tape.constant(Tensor::full(&[xs.len(), 1], 1.0 / xs.len() as f64));
    weighted_sum(tape, uniform, xs)
}

/// Average of detached probability rows, bit-identical to [`average`].
pub fn average_detached(xs: &[Tensor]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = average(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

pub fn concat(tape: &mut Tape, xs: &[Var]) -> Result<Var> {
    let rows = tape.shape(xs[0])[0];
    if xs.iter().any(|&x| tape.shape(x).len() != 2 || tape.shape(x)[0] != rows) {
        return Err(Error::Merge("concat merge needs [B, W] inputs with a common batch".into()));
    }
    tape.concat(xs, 1)
}

/// A configured merge function.
#[derive(Debug, Clone)]
pub enum Merge {
    Concat,
    Average,
    Gated(GatedUnit),
}

impl Merge {
    pub fn kind(&self) -> MergeKind {
        match self {
            Merge::Concat => MergeKind::Concat,
            Merge::Average => MergeKind::Average,
            Merge::Gated(_) => MergeKind::Gated,
        }
    }

    pub fn output_width(&self, width: usize, views: usize) -> usize {
        match self {
            Merge::Concat => width * views,
            _ => width,
        }
    }

    /// Merges `xs`; the gated variant computes its weights from `gate_inputs`.
    /// Returns the merged tensor and, for the gated variant, the weights.
    pub fn apply(&self, g: &mut Graph, xs: &[Var], gate_inputs: &[Var]) -> Result<(Var, Option<Var>)> {
        match self {
            Merge::Concat => Ok((concat(&mut g.tape, xs)?, None)),
            Merge::Average => Ok((average(&mut g.tape, xs)?, None)),
            Merge::Gated(unit) => {
                if xs.len() != unit.views {
                    return Err(Error::Merge(format!(
                        "gated unit built for {} views, got {}",
                        unit.views,
                        xs.len()
                    )));
                }
                let w = unit.weights(g, gate_inputs)?;
                Ok((weighted_sum(&mut g.tape, w, xs)?, Some(w)))
            }
        }
    }
}
