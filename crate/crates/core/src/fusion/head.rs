use crate::layers::{BatchNorm, Linear};
use crate::rng::Rng;
use crate::tensor::{Graph, ParamStore, Var};
use crate::Result;

/// Hidden width of every prediction head.
pub const HEAD_HIDDEN: usize = 64;

/// `Linear(in, 64) → batch-norm → relu → dropout → Linear(64, K) → softmax`.
#[derive(Debug, Clone)]
pub struct PredictionHead {
    pub prefix: String,
    pub input: usize,
    pub classes: usize,
    pub hidden: Linear,
    pub norm: BatchNorm,
    pub output: Linear,
    pub dropout: f64,
}

impl PredictionHead {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        classes: usize,
        dropout: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(Self {
            prefix: prefix.to_string(),
            input,
            classes,
            hidden: Linear::new(store, &format!("{prefix}.hidden"), input, HEAD_HIDDEN, rng)?,
            norm: BatchNorm::new(store, &format!("{prefix}.norm"), HEAD_HIDDEN)?,
            output: Linear::new(store, &format!("{prefix}.output"), HEAD_HIDDEN, classes, rng)?,
            dropout,
        })
    }

    /// `in·64 + 64 + 128 + 64·K + K`.
    pub fn param_count(input: usize, classes: usize) -> usize {
        Linear::param_count(input, HEAD_HIDDEN)
            + BatchNorm::param_count(HEAD_HIDDEN)
            + Linear::param_count(HEAD_HIDDEN, classes)
    }

    /// Class probabilities `[B, K]`.
    pub fn forward(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let h = self.hidden.forward(g, z)?;
        let h = self.norm.forward(g, h)?;
        let h = g.tape.relu(h)?;
        let h = g.dropout(h, self.dropout)?;
        let logits = self.output.forward(g, h)?;
        g.tape.softmax(logits, 1)
    }
}
