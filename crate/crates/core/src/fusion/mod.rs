//! Fusion strategies, merge functions, prediction heads and the
//! G-Fusion / Multi-Loss components.

mod align;
mod head;
mod merge;
mod model;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use align::{align_and_merge_input, fused_schema};
pub use head::{PredictionHead, HEAD_HIDDEN};
pub use merge::{average, average_detached, concat, weighted_sum, GatedUnit, Merge, MergeKind};
pub use model::{member_seed, FusionConfig, HybridOutputs, MvlModel, Network, Outputs, DEFAULT_GAMMA};

use crate::tensor::{Tape, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Input,
    Feature,
    Decision,
    Hybrid,
    Ensemble,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Input,
        Strategy::Feature,
        Strategy::Decision,
        Strategy::Hybrid,
        Strategy::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Input => "input",
            Strategy::Feature => "feature",
            Strategy::Decision => "decision",
            Strategy::Hybrid => "hybrid",
            Strategy::Ensemble => "ensemble",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Input => "Input",
            Strategy::Feature => "Feature",
            Strategy::Decision => "Decision",
            Strategy::Hybrid => "Hybrid",
            Strategy::Ensemble => "Ensemble",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown fusion strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    #[default]
    None,
    GFusion,
    MultiLoss,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::None, Component::GFusion, Component::MultiLoss];

    pub fn name(self) -> &'static str {
        match self {
            Component::None => "none",
            Component::GFusion => "gfusion",
            Component::MultiLoss => "multiloss",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Component::None => "-",
            Component::GFusion => "G-Fusion",
            Component::MultiLoss => "Multi-Loss",
        }
    }

    /// Components attach only to strategies that merge learned
    /// representations or predictions.
    pub fn legal_with(self, strategy: Strategy) -> bool {
        self == Component::None || matches!(strategy, Strategy::Feature | Strategy::Decision | Strategy::Hybrid)
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Component::ALL
            .into_iter()
            .find(|c| c.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown component `{s}`")))
    }
}

/// `fused + γ Σ_v view_v`, on the tape. With `γ = 0` the fused loss is
/// returned unchanged.
pub fn multi_loss(tape: &mut Tape, fused: Var, views: &[Var], gamma: f64) -> Result<Var> {
    if gamma < 0.0 {
        return Err(Error::Config(format!("multi-loss weight {gamma} must be >= 0")));
    }
    if gamma == 0.0 {
        return Ok(fused);
    }
    if views.is_empty() {
        return Err(Error::Config("multi-loss needs per-view predictions".into()));
    }
    let mut total = views[0];
    for &v in &views[1..] {
        total = tape.add(total, v)?;
    }
    let aux = tape.scale(total, gamma)?;
    tape.add(fused, aux)
}

#[cfg(test)]
mod tests;
