use serde::{Deserialize, Serialize};

use super::{EncoderConfig, ViewSchema};
use crate::layers::{LayerNorm, Linear};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tape, Tensor, Var};
use crate::{Error, Result};

/// How per-head values are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueMode {
    /// Each head projects the model-width input to its own model-width value.
    #[default]
    Projected,
    /// Heads read disjoint channel groups of the input, no projection.
    ChannelSplit,
}

/// Sinusoidal table `[steps, width]`: even columns `sin(t / 10000^(2i/width))`,
/// odd columns the matching cosine.
pub fn positional_encoding(steps: usize, width: usize) -> Tensor {
    let mut data = vec![0.0; steps * width];
    for t in 0..steps {
        for c in 0..width {
            let i = (c / 2) as f64;
            let angle = t as f64 / 10000f64.powf(2.0 * i / width as f64);
            data[t * width + c] = if c % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::new(vec![steps, width], data).expect("positive extents")
}

/// Scaled dot-product pooling of `values` over time with one query per head.
///
/// `keys` is `[B, T, H, dk]`, `values` is `[B, T, H, dv]` and `query` is
/// either `[B, H, dk]` (one per sample) or `[H, dk]` (shared). Returns the
/// pooled `[B, H·dv]` representation and the weights `[B, T, H]`.
pub fn attention_pool(tape: &mut Tape, query: Var, keys: Var, values: Var) -> Result<(Var, Var)> {
    let ks = tape.shape(keys).to_vec();
    let vs = tape.shape(values).to_vec();
    let [batch, steps, heads, dk] = ks[..] else {
        return Err(Error::Dimension(format!("attention keys {ks:?}")));
    };
    let dv = vs[3];
    if vs[..3] != ks[..3] {
        return Err(Error::Dimension(format!("attention keys {ks:?} vs values {vs:?}")));
    }
    let q = match tape.shape(query) {
        [b, h, d] if (*b, *h, *d) == (batch, heads, dk) => tape.reshape(query, &[batch, 1, heads, dk])?,
        [h, d] if (*h, *d) == (heads, dk) => query,
        s => return Err(Error::Dimension(format!("attention query {s:?} for keys {ks:?}"))),
    };
    let qk = tape.mul(keys, q)?;
    let scores = tape.sum(qk, 3)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let alpha = tape.softmax(scores, 1)?;
    let a4 = tape.reshape(alpha, &[batch, steps, heads, 1])?;
    let weighted = tape.mul(a4, values)?;
    let pooled = tape.sum(weighted, 1)?;
    let z = tape.reshape(pooled, &[batch, heads * dv])?;
    Ok((z, alpha))
}

/// Temporal attention encoder. With `learned_query` set it is the
/// lightweight variant: one learnable master query replaces the per-sample
/// average of projected queries.
#[derive(Debug, Clone)]
pub struct AttentionEncoder {
    pub prefix: String,
    pub steps: usize,
    pub width: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub value_mode: ValueMode,
    pub input_norm: LayerNorm,
    pub stem: Linear,
    pub keys: Linear,
    pub queries: Option<Linear>,
    pub learned_query: Option<ParamId>,
    pub values: Option<Linear>,
    pub output: Linear,
    pub dropout: f64,
    positions: Tensor,
}

impl AttentionEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        schema: &ViewSchema,
        config: &EncoderConfig,
        lightweight: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (d, heads, dk) = (config.hidden, config.heads, config.key_dim);
        if heads == 0 || dk == 0 {
            return Err(Error::Config("attention needs at least one head and a positive key width".into()));
        }
        if config.value_mode == ValueMode::ChannelSplit && d % heads != 0 {
            return Err(Error::Config(format!(
                "{heads} heads cannot split a model width of {d} channels"
            )));
        }
        let input_norm = LayerNorm::new(store, &format!("{prefix}.input_norm"), schema.channels)?;
        let stem = Linear::new(store, &format!("{prefix}.stem"), schema.channels, d, rng)?;
        let keys = Linear::new(store, &format!("{prefix}.keys"), d, heads * dk, rng)?;
        let (queries, learned_query) = if lightweight {
            let q = store.add_uniform(format!("{prefix}.master_query"), &[heads, dk], dk, rng)?;
            (None, Some(q))
        } else {
            (Some(Linear::new(store, &format!("{prefix}.queries"), d, heads * dk, rng)?), None)
        };
        let (values, pooled) = match config.value_mode {
            ValueMode::Projected => (
                Some(Linear::new(store, &format!("{prefix}.values"), d, heads * d, rng)?),
                heads * d,
            ),
            ValueMode::ChannelSplit => (None, d),
        };
        let output = Linear::new(store, &format!("{prefix}.output"), pooled, config.embedding_dim, rng)?;
        Ok(Self {
            prefix: prefix.to_string(),
            steps: schema.steps,
            width: d,
            heads,
            key_dim: dk,
            value_mode: config.value_mode,
            input_norm,
            stem,
            keys,
            queries,
            learned_query,
            values,
            output,
            dropout: config.dropout,
            positions: positional_encoding(schema.steps, d),
        })
    }

    pub fn param_count_for(channels: usize, config: &EncoderConfig, lightweight: bool) -> usize {
        let (d, h, dk) = (config.hidden, config.heads, config.key_dim);
        let query = if lightweight { h * dk } else { Linear::param_count(d, h * dk) };
        let (values, pooled) = match config.value_mode {
            ValueMode::Projected => (Linear::param_count(d, h * d), h * d),
            ValueMode::ChannelSplit => (0, d),
        };
        LayerNorm::param_count(channels)
            + Linear::param_count(channels, d)
            + Linear::param_count(d, h * dk)
            + query
            + values
            + Linear::param_count(pooled, config.embedding_dim)
    }

    /// Embedding `[B, embedding]` and attention weights `[B, T, H]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let shape = g.tape.shape(x).to_vec();
        let [batch, steps, _] = shape[..] else {
            return Err(Error::Dimension(format!("attention encoder input {shape:?}")));
        };
        if steps != self.steps {
            return Err(Error::Dimension(format!(
                "attention encoder configured for {} steps, got {steps}",
                self.steps
            )));
        }
        let (h, dk, d) = (self.heads, self.key_dim, self.width);
        let n = self.input_norm.forward(g, x)?;
        let e = self.stem.forward(g, n)?;
        let pe = g.input(self.positions.clone());
        let e = g.tape.add(e, pe)?;

        let k = self.keys.forward(g, e)?;
        let k = g.tape.reshape(k, &[batch, steps, h, dk])?;
        let q = match (&self.queries, self.learned_query) {
            (Some(lin), _) => {
                let q = lin.forward(g, e)?;
                let q = g.tape.mean(q, 1)?;
                g.tape.reshape(q, &[batch, h, dk])?
            }
            (None, Some(id)) => g.param(id),
            (None, None) => unreachable!("attention encoder without a query"),
        };
        let v = match &self.values {
            Some(lin) => {
                let v = lin.forward(g, e)?;
                g.tape.reshape(v, &[batch, steps, h, d])?
            }
            None => g.tape.reshape(e, &[batch, steps, h, d / h])?,
        };
        let (pooled, alpha) = attention_pool(&mut g.tape, q, k, v)?;
        let z = self.output.forward(g, pooled)?;
        let z = g.dropout(z, self.dropout)?;
        Ok((z, alpha))
    }
}
