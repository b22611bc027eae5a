use super::{EncoderConfig, ViewSchema};
use crate::layers::Linear;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Var};
use crate::{Error, Result};

/// Two-layer perceptron for static views: `D → hidden → embedding`.
#[derive(Debug, Clone)]
pub struct MlpEncoder {
    pub prefix: String,
    pub first: Linear,
    pub second: Linear,
    pub dropout: f64,
}

impl MlpEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        schema: &ViewSchema,
        config: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            first: Linear::new(store, &format!("{prefix}.layer1"), schema.channels, config.hidden, rng)?,
            second: Linear::new(store, &format!("{prefix}.layer2"), config.hidden, config.embedding_dim, rng)?,
            dropout: config.dropout,
        })
    }

    pub fn param_count_for(channels: usize, config: &EncoderConfig) -> usize {
        Linear::param_count(channels, config.hidden) + Linear::param_count(config.hidden, config.embedding_dim)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.tape.shape(x).len() != 2 {
            return Err(Error::Schema(format!(
                "MLP encoder takes static [B, D] input, got {:?}",
                g.tape.shape(x)
            )));
        }
        let h = self.first.forward(g, x)?;
        let h = g.tape.relu(h)?;
        let z = self.second.forward(g, h)?;
        g.dropout(z, self.dropout)
    }
}
