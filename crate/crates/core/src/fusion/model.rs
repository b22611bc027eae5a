use serde::{Deserialize, Serialize};

use super::align::{align_and_merge_input, fused_schema};
use super::head::PredictionHead;
use super::merge::{self, GatedUnit, Merge, MergeKind};
use super::{Component, Strategy};
use crate::data::MultiViewBatch;
use crate::encoders::{Encoder, EncoderConfig, ViewSchema};
use crate::rng::{self, Rng};
use crate::tensor::{Graph, Mode, ParamStore, Tensor, Var};
use crate::{Error, Result};

/// Default auxiliary-loss weight.
pub const DEFAULT_GAMMA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub strategy: Strategy,
    pub component: Component,
    pub encoder: EncoderConfig,
    /// Overrides the strategy's main merge (concat for Feature, average
    /// elsewhere).
    pub merge: Option<MergeKind>,
    pub gamma: f64,
    pub classes: usize,
    pub head_dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Feature,
            component: Component::None,
            encoder: EncoderConfig::default(),
            merge: None,
            gamma: DEFAULT_GAMMA,
            classes: 2,
            head_dropout: 0.2,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.component.legal_with(self.strategy) {
            return Err(Error::Config(format!(
                "component {} cannot be attached to the {} strategy",
                self.component, self.strategy
            )));
        }
        if self.gamma < 0.0 || !self.gamma.is_finite() {
            return Err(Error::Config(format!("multi-loss weight {} must be >= 0", self.gamma)));
        }
        if self.classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return Err(Error::Config(format!("head dropout {} outside [0, 1)", self.head_dropout)));
        }
        match (self.strategy, self.merge) {
            (_, Some(MergeKind::Gated)) => Err(Error::Config(
                "gated merging is selected through the gfusion component".into(),
            )),
            (Strategy::Decision, Some(MergeKind::Concat)) => Err(Error::Config(
                "decision-level merge must keep probabilities on the simplex".into(),
            )),
            (Strategy::Input | Strategy::Ensemble, Some(_)) => Err(Error::Config(format!(
                "the {} strategy has no configurable merge",
                self.strategy
            ))),
            _ => self.encoder.validate(),
        }
    }

    fn main_merge(&self) -> MergeKind {
        if self.component == Component::GFusion {
            return MergeKind::Gated;
        }
        self.merge.unwrap_or(match self.strategy {
            Strategy::Feature => MergeKind::Concat,
            _ => MergeKind::Average,
        })
    }
}

/// Structure of a non-ensemble model; parameters live in the model's store.
#[derive(Debug, Clone)]
pub enum Network {
    Input {
        encoder: Encoder,
        head: PredictionHead,
    },
    Feature {
        encoders: Vec<Encoder>,
        merge: Merge,
        head: PredictionHead,
        /// Per-view heads for the auxiliary losses; unused at inference.
        aux: Vec<PredictionHead>,
    },
    Decision {
        encoders: Vec<Encoder>,
        heads: Vec<PredictionHead>,
        merge: Merge,
    },
    Hybrid {
        encoders: Vec<Encoder>,
        merge: Merge,
        feature_head: PredictionHead,
        heads: Vec<PredictionHead>,
    },
}

/// Symbolic outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Outputs {
    /// Fused class probabilities `[B, K]`.
    pub probs: Var,
    /// Per-view probabilities, when requested and available.
    pub view_probs: Vec<Var>,
    /// Feature- and decision-branch probabilities of a Hybrid model.
    pub branches: Option<(Var, Var)>,
    /// Gate weights `[B, |V|, W]` of a gated merge.
    pub gate: Option<Var>,
}

/// Detached Hybrid predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridOutputs {
    pub feature: Tensor,
    pub decision: Tensor,
    pub fused: Tensor,
}

fn encode_all(encoders: &[Encoder], views: &[ViewSchema], g: &mut Graph, batch: &MultiViewBatch) -> Result<Vec<Var>> {
    let mut zs = Vec::with_capacity(encoders.len());
    for (enc, schema) in encoders.iter().zip(views) {
        let (s, t) = batch.view(&schema.name)?;
        crate::encoders::check_input(s, t.shape())?;
        let x = g.input(t.clone());
        zs.push(enc.forward(g, x)?);
    }
    let width = g.tape.shape(zs[0])[1];
    if zs.iter().any(|&z| g.tape.shape(z)[1] != width) {
        return Err(Error::Merge("view embeddings differ in width".into()));
    }
    Ok(zs)
}

fn heads_forward(heads: &[PredictionHead], g: &mut Graph, zs: &[Var]) -> Result<Vec<Var>> {
    heads.iter().zip(zs).map(|(h, &z)| h.forward(g, z)).collect()
}

/// Renormalises non-negative rows to sum to one.
fn renormalise(g: &mut Graph, p: Var) -> Result<Var> {
    let rows = g.tape.shape(p)[0];
    let s = g.tape.sum(p, 1)?;
    let s = g.tape.reshape(s, &[rows, 1])?;
    g.tape.div(p, s)
}

impl Network {
    /// Runs the strategy. `view_predictions` requests per-view probabilities
    /// (auxiliary heads of Feature fusion are only evaluated then).
    pub fn forward(
        &self,
        g: &mut Graph,
        views: &[ViewSchema],
        batch: &MultiViewBatch,
        view_predictions: bool,
    ) -> Result<Outputs> {
        match self {
            Network::Input { encoder, head } => {
                let parts: Vec<(&ViewSchema, &Tensor)> = views
                    .iter()
                    .map(|s| batch.view(&s.name))
                    .collect::<Result<_>>()?;
                let fused = align_and_merge_input(&parts)?;
                let x = g.input(fused);
                let z = encoder.forward(g, x)?;
                let probs = head.forward(g, z)?;
                Ok(Outputs {
                    probs,
                    view_probs: Vec::new(),
                    branches: None,
                    gate: None,
                })
            }
            Network::Feature {
                encoders,
                merge,
                head,
                aux,
            } => {
                let zs = encode_all(encoders, views, g, batch)?;
                let (zf, gate) = merge.apply(g, &zs, &zs)?;
                let probs = head.forward(g, zf)?;
                let view_probs = if view_predictions && !aux.is_empty() {
                    heads_forward(aux, g, &zs)?
                } else {
                    Vec::new()
                };
                Ok(Outputs {
                    probs,
                    view_probs,
                    branches: None,
                    gate,
                })
            }
            Network::Decision {
                encoders,
                heads,
                merge,
            } => {
                let zs = encode_all(encoders, views, g, batch)?;
                let ys = heads_forward(heads, g, &zs)?;
                let (mut probs, gate) = merge.apply(g, &ys, &zs)?;
                if gate.is_some() {
                    probs = renormalise(g, probs)?;
                }
                Ok(Outputs {
                    probs,
                    view_probs: ys,
                    branches: None,
                    gate,
                })
            }
            Network::Hybrid {
                encoders,
                merge,
                feature_head,
                heads,
            } => {
                let zs = encode_all(encoders, views, g, batch)?;
                let (zf, gate) = merge.apply(g, &zs, &zs)?;
                let feature = feature_head.forward(g, zf)?;
                let ys = heads_forward(heads, g, &zs)?;
                let decision = merge::average(&mut g.tape, &ys)?;
                let probs = merge::average(&mut g.tape, &[feature, decision])?;
                Ok(Outputs {
                    probs,
                    view_probs: ys,
                    branches: Some((feature, decision)),
                    gate,
                })
            }
        }
    }

    pub fn encoders(&self) -> Vec<&Encoder> {
        match self {
            Network::Input { encoder, .. } => vec![encoder],
            Network::Feature { encoders, .. }
            | Network::Decision { encoders, .. }
            | Network::Hybrid { encoders, .. } => encoders.iter().collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Body {
    Network(Network),
    Ensemble(Vec<MvlModel>),
}

/// A fusion strategy bound to its encoders, merges, heads and parameters.
#[derive(Debug, Clone)]
pub struct MvlModel {
    pub config: FusionConfig,
    pub views: Vec<ViewSchema>,
    pub store: ParamStore,
    pub seed: u64,
    body: Body,
}

/// Seed of the ensemble member dedicated to `view`.
pub fn member_seed(seed: u64, view: &str) -> u64 {
    rng::derive_seed(seed, &format!("member.{view}"))
}

impl MvlModel {
    /// Builds and initialises a model. Main parameters draw from the `init`
    /// stream in construction order (encoders, then heads); auxiliary heads
    /// draw from their own stream, and gates start at zero.
    pub fn new(config: FusionConfig, views: Vec<ViewSchema>, seed: u64) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::Config("a model needs at least one view".into()));
        }
        for (i, v) in views.iter().enumerate() {
            v.validate()?;
            if views[..i].iter().any(|w| w.name == v.name) {
                return Err(Error::Config(format!("view `{}` listed twice", v.name)));
            }
        }
        if config.strategy == Strategy::Ensemble {
            let members = views
                .iter()
                .map(|v| Self::single_view(v.clone(), &config, member_seed(seed, &v.name)))
                .collect::<Result<Vec<_>>>()?;
            return Ok(Self {
                config,
                views,
                store: ParamStore::new(),
                seed,
                body: Body::Ensemble(members),
            });
        }
        let mut store = ParamStore::new();
        let mut init = rng::stream(seed, "init");
        let mut aux_init = rng::stream(seed, "init.aux");
        let network = build_network(&config, &views, &mut store, &mut init, &mut aux_init)?;
        Ok(Self {
            config,
            views,
            store,
            seed,
            body: Body::Network(network),
        })
    }

    /// Single-view model (encoder and head): the Input strategy on one view.
    pub fn single_view(view: ViewSchema, config: &FusionConfig, seed: u64) -> Result<Self> {
        let config = FusionConfig {
            strategy: Strategy::Input,
            component: Component::None,
            merge: None,
            ..config.clone()
        };
        Self::new(config, vec![view], seed)
    }

    pub fn strategy(&self) -> Strategy {
        self.config.strategy
    }

    pub fn network(&self) -> Option<&Network> {
        match &self.body {
            Body::Network(n) => Some(n),
            Body::Ensemble(_) => None,
        }
    }

    /// Network and store borrowed together for a training step.
    pub fn parts_mut(&mut self) -> Option<(&Network, &mut ParamStore, &[ViewSchema])> {
        match &self.body {
            Body::Network(n) => Some((n, &mut self.store, &self.views)),
            Body::Ensemble(_) => None,
        }
    }

    pub fn members(&self) -> &[MvlModel] {
        match &self.body {
            Body::Ensemble(m) => m,
            Body::Network(_) => &[],
        }
    }

    pub fn members_mut(&mut self) -> &mut [MvlModel] {
        match &mut self.body {
            Body::Ensemble(m) => m,
            Body::Network(_) => &mut [],
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.body {
            Body::Network(_) => self.store.count(),
            Body::Ensemble(m) => m.iter().map(|m| m.param_count()).sum(),
        }
    }

    /// Learnable parameters excluding auxiliary heads (which are dropped at
    /// inference).
    pub fn inference_param_count(&self) -> usize {
        self.param_count() - self.store.count_prefix("aux.")
    }

    /// Infer-mode class probabilities `[B, K]`.
    pub fn predict(&mut self, batch: &MultiViewBatch) -> Result<Tensor> {
        match &mut self.body {
            Body::Network(net) => {
                let mut g = Graph::new(&mut self.store, Mode::Infer, None);
                let out = net.forward(&mut g, &self.views, batch, false)?;
                Ok(g.tape.value(out.probs).clone())
            }
            Body::Ensemble(members) => {
                if members.len() != self.views.len() {
                    return Err(Error::IncompleteEnsemble(format!(
                        "{} of {} members present",
                        members.len(),
                        self.views.len()
                    )));
                }
                let probs = members
                    .iter_mut()
                    .map(|m| m.predict(batch))
                    .collect::<Result<Vec<_>>>()?;
                merge::average_detached(&probs)
            }
        }
    }

    /// Infer-mode per-view probabilities (Decision, Hybrid and Ensemble).
    pub fn predict_views(&mut self, batch: &MultiViewBatch) -> Result<Vec<Tensor>> {
        match &mut self.body {
            Body::Network(net) => {
                let mut g = Graph::new(&mut self.store, Mode::Infer, None);
                let out = net.forward(&mut g, &self.views, batch, true)?;
                Ok(out.view_probs.iter().map(|&v| g.tape.value(v).clone()).collect())
            }
            Body::Ensemble(members) => members.iter_mut().map(|m| m.predict(batch)).collect(),
        }
    }

    /// Infer-mode branch outputs of a Hybrid model.
    pub fn hybrid_outputs(&mut self, batch: &MultiViewBatch) -> Result<HybridOutputs> {
        let Body::Network(net) = &self.body else {
            return Err(Error::Config("hybrid outputs requested from an ensemble".into()));
        };
        let mut g = Graph::new(&mut self.store, Mode::Infer, None);
        let out = net.forward(&mut g, &self.views, batch, false)?;
        let (f, d) = out
            .branches
            .ok_or_else(|| Error::Config(format!("{} model has no branches", self.config.strategy)))?;
        Ok(HybridOutputs {
            feature: g.tape.value(f).clone(),
            decision: g.tape.value(d).clone(),
            fused: g.tape.value(out.probs).clone(),
        })
    }

    /// Gate weights of a gated merge for `batch` (infer mode).
    pub fn gate_weights(&mut self, batch: &MultiViewBatch) -> Result<Option<Tensor>> {
        let Body::Network(net) = &self.body else {
            return Ok(None);
        };
        let mut g = Graph::new(&mut self.store, Mode::Infer, None);
        let out = net.forward(&mut g, &self.views, batch, false)?;
        Ok(out.gate.map(|v| g.tape.value(v).clone()))
    }

    /// Copies trained ensemble members into a Decision model with the same
    /// views. Returns the number of tensors copied.
    pub fn load_members_into_decision(&self, decision: &mut MvlModel) -> Result<usize> {
        if decision.strategy() != Strategy::Decision {
            return Err(Error::Config("target model must use the Decision strategy".into()));
        }
        let mut copied = 0;
        for (member, view) in self.members().iter().zip(&self.views) {
            let v = view.name.clone();
            copied += decision.store.copy_from(&member.store, |name| {
                name.replacen("input.encoder", &format!("encoder.{v}"), 1)
                    .replacen("input.head", &format!("head.{v}"), 1)
            });
        }
        Ok(copied)
    }
}

fn build_network(
    config: &FusionConfig,
    views: &[ViewSchema],
    store: &mut ParamStore,
    init: &mut Rng,
    aux_init: &mut Rng,
) -> Result<Network> {
    let k = config.classes;
    let enc = &config.encoder;
    let drop = config.head_dropout;
    let per_view_encoders = |store: &mut ParamStore, init: &mut Rng| -> Result<Vec<Encoder>> {
        views
            .iter()
            .map(|v| Encoder::new(store, &format!("encoder.{}", v.name), v, enc, init))
            .collect()
    };
    let width = enc.embedding_dim;
    let n = views.len();
    let build_merge = |store: &mut ParamStore, prefix: &str, merged_width: usize| -> Result<Merge> {
        Ok(match config.main_merge() {
            MergeKind::Concat => Merge::Concat,
            MergeKind::Average => Merge::Average,
            MergeKind::Gated => Merge::Gated(GatedUnit::new(store, prefix, n, n * width, merged_width)?),
        })
    };
    Ok(match config.strategy {
        Strategy::Input => {
            let schema = fused_schema(views)?;
            let encoder = Encoder::new(store, "input.encoder", &schema, enc, init)?;
            let head = PredictionHead::new(store, "input.head", width, k, drop, init)?;
            Network::Input { encoder, head }
        }
        Strategy::Feature => {
            let encoders = per_view_encoders(store, init)?;
            let merge = build_merge(store, "gate.feature", width)?;
            let head = PredictionHead::new(store, "head.fused", merge.output_width(width, n), k, drop, init)?;
            let aux = if config.component == Component::MultiLoss {
                views
                    .iter()
                    .map(|v| PredictionHead::new(store, &format!("aux.{}", v.name), width, k, drop, aux_init))
                    .collect::<Result<_>>()?
            } else {
                Vec::new()
            };
            Network::Feature {
                encoders,
                merge,
                head,
                aux,
            }
        }
        Strategy::Decision => {
            let encoders = per_view_encoders(store, init)?;
            let heads = views
                .iter()
                .map(|v| PredictionHead::new(store, &format!("head.{}", v.name), width, k, drop, init))
                .collect::<Result<_>>()?;
            let merge = build_merge(store, "gate.decision", k)?;
            Network::Decision {
                encoders,
                heads,
                merge,
            }
        }
        Strategy::Hybrid => {
            let encoders = per_view_encoders(store, init)?;
            let merge = build_merge(store, "gate.feature", width)?;
            let feature_head =
                PredictionHead::new(store, "head.feature", merge.output_width(width, n), k, drop, init)?;
            let heads = views
                .iter()
                .map(|v| PredictionHead::new(store, &format!("head.{}", v.name), width, k, drop, init))
                .collect::<Result<_>>()?;
            Network::Hybrid {
                encoders,
                merge,
                feature_head,
                heads,
            }
        }
        Strategy::Ensemble => unreachable!("ensembles are built from members"),
    })
}
