//! View encoders mapping one view to a fixed-width embedding.
//!
//! Temporal views (`[B, T, D]`) use one of the five temporal architectures;
//! static views (`[B, D]`) always use the MLP encoder.

mod attention;
mod count;
mod mlp;
mod recurrent;
mod tempcnn;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use attention::{attention_pool, positional_encoding, AttentionEncoder, ValueMode};
pub use count::{encoder_count, formula_count, table_targets, TableTarget, PREDICTION_HEAD_TARGET};
pub use mlp::MlpEncoder;
pub use recurrent::{CellKind, RecurrentEncoder};
pub use tempcnn::TempCnnEncoder;

use crate::rng::{self, Rng};
use crate::tensor::{Graph, Mode, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Width of every encoder embedding.
pub const EMBEDDING_DIM: usize = 64;
/// Monthly steps of one season-year.
pub const MONTHS: usize = 12;

/// Shape contract of one view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewSchema {
    pub name: String,
    pub temporal: bool,
    /// Time steps; 0 for static views.
    pub steps: usize,
    pub channels: usize,
}

impl ViewSchema {
    pub fn temporal(name: impl Into<String>, steps: usize, channels: usize) -> Self {
        Self {
            name: name.into(),
            temporal: true,
            steps,
            channels,
        }
    }

    pub fn fixed(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            temporal: false,
            steps: 0,
            channels,
        }
    }

    /// Sentinel-2 bands B2, B3, B4, B5, B6, B7, B8, B8A, B9, B11, B12.
    pub fn optical() -> Self {
        Self::temporal("optical", MONTHS, 11)
    }

    /// Sentinel-1 VV and VH backscatter.
    pub fn radar() -> Self {
        Self::temporal("radar", MONTHS, 2)
    }

    /// Precipitation and temperature.
    pub fn weather() -> Self {
        Self::temporal("weather", MONTHS, 2)
    }

    pub fn ndvi() -> Self {
        Self::temporal("ndvi", MONTHS, 1)
    }

    /// Elevation and slope.
    pub fn topography() -> Self {
        Self::fixed("topography", 2)
    }

    pub fn canonical(name: &str) -> Option<Self> {
        match name {
            "optical" => Some(Self::optical()),
            "radar" => Some(Self::radar()),
            "weather" => Some(Self::weather()),
            "ndvi" => Some(Self::ndvi()),
            "topography" => Some(Self::topography()),
            _ => None,
        }
    }

    pub fn canonical_all() -> Vec<Self> {
        vec![
            Self::optical(),
            Self::radar(),
            Self::weather(),
            Self::ndvi(),
            Self::topography(),
        ]
    }

    /// Values per sample.
    pub fn sample_len(&self) -> usize {
        self.steps.max(1) * self.channels
    }

    /// Batch shape for `batch` samples.
    pub fn batch_shape(&self, batch: usize) -> Vec<usize> {
        if self.temporal {
            vec![batch, self.steps, self.channels]
        } else {
            vec![batch, self.channels]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return Err(Error::Schema(format!("view `{}` has no channels", self.name)));
        }
        if self.temporal && self.steps == 0 {
            return Err(Error::EmptySeries(format!("view `{}` has no time steps", self.name)));
        }
        if !self.temporal && self.steps != 0 {
            return Err(Error::Schema(format!("static view `{}` declares time steps", self.name)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Lstm,
    Gru,
    TempCnn,
    Tae,
    Ltae,
    Mlp,
}

impl Architecture {
    /// The five temporal architectures, in reporting order.
    pub const TEMPORAL: [Architecture; 5] = [
        Architecture::Lstm,
        Architecture::Gru,
        Architecture::Tae,
        Architecture::Ltae,
        Architecture::TempCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Lstm => "lstm",
            Architecture::Gru => "gru",
            Architecture::TempCnn => "tempcnn",
            Architecture::Tae => "tae",
            Architecture::Ltae => "ltae",
            Architecture::Mlp => "mlp",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Architecture::Lstm => "LSTM",
            Architecture::Gru => "GRU",
            Architecture::TempCnn => "TempCNN",
            Architecture::Tae => "TAE",
            Architecture::Ltae => "L-TAE",
            Architecture::Mlp => "MLP",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "").as_str() {
            "lstm" => Ok(Architecture::Lstm),
            "gru" => Ok(Architecture::Gru),
            "tempcnn" => Ok(Architecture::TempCnn),
            "tae" => Ok(Architecture::Tae),
            "ltae" => Ok(Architecture::Ltae),
            "mlp" => Ok(Architecture::Mlp),
            _ => Err(Error::Config(format!("unknown encoder architecture `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub architecture: Architecture,
    pub hidden: usize,
    pub layers: usize,
    pub embedding_dim: usize,
    /// TempCNN kernel size (odd).
    pub kernel: usize,
    /// TempCNN dense width.
    pub dense: usize,
    pub heads: usize,
    pub key_dim: usize,
    pub value_mode: ValueMode,
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Gru,
            hidden: 64,
            layers: 2,
            embedding_dim: EMBEDDING_DIM,
            kernel: 5,
            dense: 256,
            heads: 4,
            key_dim: 32,
            value_mode: ValueMode::Projected,
            dropout: 0.2,
        }
    }
}

impl EncoderConfig {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            ..Self::default()
        }
    }

    /// Configuration actually used for `schema`: static views always get
    /// the MLP encoder.
    pub fn for_schema(&self, schema: &ViewSchema) -> Self {
        let mut c = self.clone();
        if !schema.temporal {
            c.architecture = Architecture::Mlp;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.layers == 0 || self.embedding_dim == 0 {
            return Err(Error::Config("encoder widths and depth must be positive".into()));
        }
        if self.architecture == Architecture::TempCnn && self.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("TempCNN kernel {} must be odd", self.kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One view encoder; parameters live in the owning [`ParamStore`].
#[derive(Debug, Clone)]
pub enum Encoder {
    Recurrent(RecurrentEncoder),
    TempCnn(TempCnnEncoder),
    Attention(AttentionEncoder),
    Mlp(MlpEncoder),
}

impl Encoder {
    /// Registers parameters under `prefix` and returns the encoder.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        schema: &ViewSchema,
        config: &EncoderConfig,
        rng: &mut Rng,
    ) -> Result<Self> {
        schema.validate()?;
        let config = config.for_schema(schema);
        config.validate()?;
        match (config.architecture, schema.temporal) {
            (Architecture::Mlp, false) => Ok(Encoder::Mlp(MlpEncoder::new(store, prefix, schema, &config, rng)?)),
            (Architecture::Mlp, true) => Err(Error::Schema(format!(
                "MLP encoder is reserved for static views; `{}` is temporal",
                schema.name
            ))),
            (Architecture::Lstm, _) => Ok(Encoder::Recurrent(RecurrentEncoder::new(
                store,
                prefix,
                schema,
                &config,
                CellKind::Lstm,
                rng,
            )?)),
            (Architecture::Gru, _) => Ok(Encoder::Recurrent(RecurrentEncoder::new(
                store,
                prefix,
                schema,
                &config,
                CellKind::Gru,
                rng,
            )?)),
            (Architecture::TempCnn, _) => Ok(Encoder::TempCnn(TempCnnEncoder::new(store, prefix, schema, &config, rng)?)),
            (Architecture::Tae, _) => Ok(Encoder::Attention(AttentionEncoder::new(
                store, prefix, schema, &config, false, rng,
            )?)),
            (Architecture::Ltae, _) => Ok(Encoder::Attention(AttentionEncoder::new(
                store, prefix, schema, &config, true, rng,
            )?)),
        }
    }

    /// `[B, T, D]` (or `[B, D]` for static views) to `[B, embedding_dim]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Encoder::Recurrent(e) => e.forward(g, x),
            Encoder::TempCnn(e) => e.forward(g, x),
            Encoder::Attention(e) => e.forward(g, x).map(|(z, _)| z),
            Encoder::Mlp(e) => e.forward(g, x),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Encoder::Recurrent(e) => match e.cell {
                CellKind::Gru => Architecture::Gru,
                CellKind::Lstm => Architecture::Lstm,
            },
            Encoder::TempCnn(_) => Architecture::TempCnn,
            Encoder::Attention(e) => {
                if e.learned_query.is_some() {
                    Architecture::Ltae
                } else {
                    Architecture::Tae
                }
            }
            Encoder::Mlp(_) => Architecture::Mlp,
        }
    }

    pub fn prefix(&self) -> &str {
        match self {
            Encoder::Recurrent(e) => &e.prefix,
            Encoder::TempCnn(e) => &e.prefix,
            Encoder::Attention(e) => &e.prefix,
            Encoder::Mlp(e) => &e.prefix,
        }
    }

    pub fn param_count(&self, store: &ParamStore) -> usize {
        store.count_prefix(&format!("{}.", self.prefix()))
    }
}

/// A single encoder together with its own parameters and mode.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub schema: ViewSchema,
    pub encoder: Encoder,
    pub store: ParamStore,
    pub mode: Mode,
}

impl EncoderState {
    pub fn new(schema: &ViewSchema, config: &EncoderConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, "init");
        let encoder = Encoder::new(&mut store, "encoder", schema, config, &mut r)?;
        Ok(Self {
            config: config.for_schema(schema),
            schema: schema.clone(),
            encoder,
            store,
            mode: Mode::Infer,
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Infer-mode embedding of a detached batch.
    pub fn encode(&mut self, x: &Tensor) -> Result<Tensor> {
        check_input(&self.schema, x.shape())?;
        let mut g = Graph::new(&mut self.store, Mode::Infer, None);
        let v = g.input(x.clone());
        let z = self.encoder.forward(&mut g, v)?;
        Ok(g.tape.value(z).clone())
    }
}

/// Checks a batch shape against a schema.
pub fn check_input(schema: &ViewSchema, shape: &[usize]) -> Result<()> {
    let ok = match (schema.temporal, shape) {
        (true, [_, t, d]) => *t == schema.steps && *d == schema.channels,
        (false, [_, d]) => *d == schema.channels,
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Schema(format!(
            "view `{}` expects {:?} per batch, got {shape:?}",
            schema.name,
            schema.batch_shape(0)
        )))
    }
}
