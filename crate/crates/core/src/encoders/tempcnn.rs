use super::{EncoderConfig, ViewSchema};
use crate::layers::{BatchNorm, Linear};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

const CONV_BLOCKS: usize = 3;

#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub kernels: ParamId,
    pub bias: ParamId,
    pub norm: BatchNorm,
}

/// Three `conv(k) + batch-norm + relu` blocks of `hidden` filters, flatten,
/// `dense` units with batch-norm and relu, then a linear map to the embedding.
#[derive(Debug, Clone)]
pub struct TempCnnEncoder {
    pub prefix: String,
    pub steps: usize,
    pub blocks: Vec<ConvBlock>,
    pub dense: Linear,
    pub dense_norm: BatchNorm,
    pub output: Linear,
    pub dropout: f64,
}

impl TempCnnEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        schema: &ViewSchema,
        config: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (h, k) = (config.hidden, config.kernel);
        let mut blocks = Vec::with_capacity(CONV_BLOCKS);
        for b in 0..CONV_BLOCKS {
            let cin = if b == 0 { schema.channels } else { h };
            let name = format!("{prefix}.conv{}", b + 1);
            blocks.push(ConvBlock {
                kernels: store.add_uniform(format!("{name}.kernels"), &[h, cin, k], cin * k, rng)?,
                bias: store.add(format!("{name}.bias"), Tensor::zeros(&[h]))?,
                norm: BatchNorm::new(store, &format!("{name}.norm"), h)?,
            });
        }
        let flat = schema.steps * h;
        let dense = Linear::new(store, &format!("{prefix}.dense"), flat, config.dense, rng)?;
        let dense_norm = BatchNorm::new(store, &format!("{prefix}.dense_norm"), config.dense)?;
        let output = Linear::new(store, &format!("{prefix}.output"), config.dense, config.embedding_dim, rng)?;
        Ok(Self {
            prefix: prefix.to_string(),
            steps: schema.steps,
            blocks,
            dense,
            dense_norm,
            output,
            dropout: config.dropout,
        })
    }

    pub fn param_count_for(channels: usize, steps: usize, config: &EncoderConfig) -> usize {
        let (h, k) = (config.hidden, config.kernel);
        let convs = (channels * h * k + h) + (CONV_BLOCKS - 1) * (h * h * k + h);
        convs
            + CONV_BLOCKS * BatchNorm::param_count(h)
            + Linear::param_count(steps * h, config.dense)
            + BatchNorm::param_count(config.dense)
            + Linear::param_count(config.dense, config.embedding_dim)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.steps {
            return Err(Error::Dimension(format!(
                "TempCNN configured for {} steps, got input {shape:?}",
                self.steps
            )));
        }
        let mut h = x;
        for b in &self.blocks {
            let (w, bias) = (g.param(b.kernels), g.param(b.bias));
            h = g.tape.conv1d_same(h, w, bias)?;
            h = b.norm.forward(g, h)?;
            h = g.tape.relu(h)?;
        }
        let flat = g.tape.flatten_batch(h)?;
        let d = self.dense.forward(g, flat)?;
        let d = self.dense_norm.forward(g, d)?;
        let d = g.tape.relu(d)?;
        let z = self.output.forward(g, d)?;
        g.dropout(z, self.dropout)
    }
}
