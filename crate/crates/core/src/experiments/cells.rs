use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoders::Architecture;
use crate::fusion::{Component, Strategy};
use crate::{Error, Result};

/// Cells of the full protocol: every encoder in every strategy, plus the
/// two components on Feature, Decision and Hybrid.
pub const GRID_CELLS: usize = 31;
/// Cells of the reduced protocol: Input with every encoder, then the
/// remaining strategies and components with the selected one.
pub const SEARCH_CELLS: usize = 16;

/// Encoder of a cell, possibly known only after earlier cells ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EncoderSlot {
    Fixed(Architecture),
    /// Best plain cell of this strategy (full-grid components).
    BestOf(Strategy),
    /// Winner of the Input-fusion phase (reduced protocol).
    Selected,
}

impl fmt::Display for EncoderSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderSlot::Fixed(a) => f.write_str(a.name()),
            EncoderSlot::BestOf(_) => f.write_str("best"),
            EncoderSlot::Selected => f.write_str("selected"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub encoder: EncoderSlot,
    pub strategy: Strategy,
    pub component: Component,
}

impl Cell {
    pub fn new(encoder: EncoderSlot, strategy: Strategy, component: Component) -> Self {
        Self {
            encoder,
            strategy,
            component,
        }
    }

    pub fn fixed(arch: Architecture, strategy: Strategy, component: Component) -> Self {
        Self::new(EncoderSlot::Fixed(arch), strategy, component)
    }

    /// `gru-feature`, `best-hybrid-gfusion`, ...
    pub fn id(&self) -> String {
        self.id_with(&self.encoder.to_string())
    }

    pub fn id_with(&self, encoder: &str) -> String {
        match self.component {
            Component::None => format!("{encoder}-{}", self.strategy.name()),
            c => format!("{encoder}-{}-{}", self.strategy.name(), c.name()),
        }
    }

    pub fn resolved(&self, arch: Architecture) -> Cell {
        Cell::fixed(arch, self.strategy, self.component)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.component.legal_with(self.strategy) {
            return Err(Error::Config(format!(
                "illegal cell {}: component {} cannot be attached to {}",
                self.id(),
                self.component,
                self.strategy
            )));
        }
        if self.encoder == EncoderSlot::Fixed(Architecture::Mlp) {
            return Err(Error::Config(format!("illegal cell {}: mlp is reserved for static views", self.id())));
        }
        Ok(())
    }
}

fn component_cells(slot: impl Fn(Strategy) -> EncoderSlot) -> Vec<Cell> {
    let mut out = Vec::new();
    for component in [Component::GFusion, Component::MultiLoss] {
        for strategy in Strategy::ALL {
            if component.legal_with(strategy) {
                out.push(Cell::new(slot(strategy), strategy, component));
            }
        }
    }
    out
}

/// The full protocol. `component_encoder` pins the encoder of the
/// component cells instead of taking the best plain cell per strategy.
pub fn grid_cells(component_encoder: Option<Architecture>) -> Vec<Cell> {
    let mut cells = Vec::new();
    for strategy in Strategy::ALL {
        for arch in Architecture::TEMPORAL {
            cells.push(Cell::fixed(arch, strategy, Component::None));
        }
    }
    cells.extend(component_cells(|s| match component_encoder {
        Some(a) => EncoderSlot::Fixed(a),
        None => EncoderSlot::BestOf(s),
    }));
    cells
}

/// The reduced protocol: five Input cells, then everything else with the
/// selected encoder (its Input cell is reused, not retrained).
pub fn search_cells() -> Vec<Cell> {
    let mut cells: Vec<Cell> = Architecture::TEMPORAL
        .into_iter()
        .map(|a| Cell::fixed(a, Strategy::Input, Component::None))
        .collect();
    for strategy in Strategy::ALL {
        cells.push(Cell::new(EncoderSlot::Selected, strategy, Component::None));
    }
    cells.extend(component_cells(|_| EncoderSlot::Selected));
    cells
}

/// Validates every cell and the protocol's cardinality before anything
/// is trained.
pub fn check_plan(cells: &[Cell], expected: usize) -> Result<()> {
    for c in cells {
        c.validate()?;
    }
    if cells.len() != expected {
        return Err(Error::Validation(format!(
            "protocol plans {} cells, expected {expected}",
            cells.len()
        )));
    }
    for (i, c) in cells.iter().enumerate() {
        if cells[..i].contains(c) {
            return Err(Error::Validation(format!("cell {} planned twice", c.id())));
        }
    }
    Ok(())
}
