use super::{EncoderConfig, ViewSchema};
use crate::layers::Linear;
use crate::rng::Rng;
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    /// Gates r, z, n.
    Gru,
    /// Gates i, f, g, o.
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

/// One stacked recurrent layer with separate input-side and hidden-side biases.
#[derive(Debug, Clone)]
pub struct RecurrentLayer {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
}

/// Stacked unidirectional GRU/LSTM; the last hidden state of the top layer
/// is projected to the embedding.
#[derive(Debug, Clone)]
pub struct RecurrentEncoder {
    pub prefix: String,
    pub cell: CellKind,
    pub hidden: usize,
    pub layers: Vec<RecurrentLayer>,
    pub projection: Linear,
    pub dropout: f64,
}

impl RecurrentEncoder {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        schema: &ViewSchema,
        config: &EncoderConfig,
        cell: CellKind,
        rng: &mut Rng,
    ) -> Result<Self> {
        let h = config.hidden;
        let width = cell.gates() * h;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let input = if l == 0 { schema.channels } else { h };
            let name = format!("{prefix}.layer{}", l + 1);
            layers.push(RecurrentLayer {
                w_ih: store.add_uniform(format!("{name}.w_ih"), &[input, width], h, rng)?,
                w_hh: store.add_uniform(format!("{name}.w_hh"), &[h, width], h, rng)?,
                b_ih: store.add(format!("{name}.b_ih"), Tensor::zeros(&[width]))?,
                b_hh: store.add(format!("{name}.b_hh"), Tensor::zeros(&[width]))?,
                input,
            });
        }
        let projection = Linear::new(store, &format!("{prefix}.projection"), h, config.embedding_dim, rng)?;
        Ok(Self {
            prefix: prefix.to_string(),
            cell,
            hidden: h,
            layers,
            projection,
            dropout: config.dropout,
        })
    }

    /// Per layer `G·H·(D_in + H) + 2·G·H`, plus the projection.
    pub fn param_count_for(cell: CellKind, channels: usize, config: &EncoderConfig) -> usize {
        let (g, h) = (cell.gates(), config.hidden);
        let mut n = 0;
        for l in 0..config.layers {
            let input = if l == 0 { channels } else { h };
            n += g * h * (input + h) + 2 * g * h;
        }
        n + Linear::param_count(h, config.embedding_dim)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let last = self.final_hidden(g, x)?;
        let z = self.projection.forward(g, last)?;
        g.dropout(z, self.dropout)
    }

    /// Final hidden state of the top layer, `[B, H]`.
    pub fn final_hidden(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let shape = g.tape.shape(x).to_vec();
        let [batch, steps, _] = shape[..] else {
            return Err(Error::Dimension(format!("recurrent encoder input {shape:?}")));
        };
        if steps == 0 {
            return Err(Error::EmptySeries("recurrent encoder got no time steps".into()));
        }
        let mut seq = x;
        let mut last = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let top = l + 1 == self.layers.len();
            let (h, outputs) = self.run_layer(g, layer, seq, batch, steps, top)?;
            last = Some(h);
            if !top {
                seq = g.tape.concat(&outputs, 1)?;
            }
        }
        Ok(last.expect("at least one layer"))
    }

    fn run_layer(
        &self,
        g: &mut Graph,
        layer: &RecurrentLayer,
        seq: Var,
        batch: usize,
        steps: usize,
        top: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let h = self.hidden;
        let width = self.cell.gates() * h;
        let (w_ih, w_hh, b_ih, b_hh) = (
            g.param(layer.w_ih),
            g.param(layer.w_hh),
            g.param(layer.b_ih),
            g.param(layer.b_hh),
        );
        // Input-side gate pre-activations for every step at once.
        let flat = g.tape.reshape(seq, &[batch * steps, layer.input])?;
        let gi_all = g.tape.matmul(flat, w_ih)?;
        let gi_all = g.tape.add(gi_all, b_ih)?;
        let gi_all = g.tape.reshape(gi_all, &[batch, steps, width])?;

        let lstm = self.cell == CellKind::Lstm;
        let packed = if lstm { 2 * h } else { h };
        let mut state = g.input(Tensor::zeros(&[batch, packed]));
        let mut hidden = if lstm { g.input(Tensor::zeros(&[batch, h])) } else { state };
        let mut outputs = Vec::new();
        for t in 0..steps {
            let gi = g.tape.slice(gi_all, 1, t, 1)?;
            let gi = g.tape.reshape(gi, &[batch, width])?;
            let gh = g.tape.matmul(hidden, w_hh)?;
            let gh = g.tape.add(gh, b_hh)?;
            if lstm {
                state = g.tape.lstm_cell(gi, gh, state)?;
                hidden = g.tape.slice(state, 1, 0, h)?;
            } else {
                state = g.tape.gru_cell(gi, gh, state)?;
                hidden = state;
            }
            if !top {
                outputs.push(g.tape.reshape(hidden, &[batch, 1, h])?);
            }
        }
        Ok((hidden, outputs))
    }
}
