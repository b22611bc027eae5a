//! Configuration-driven experiment protocols: single cells, the full
//! encoder × strategy grid, the reduced encoder search, single-view
//! baselines and report emission.

mod cells;
mod config;
mod report;
mod runner;

pub use cells::{check_plan, grid_cells, search_cells, Cell, EncoderSlot, GRID_CELLS, SEARCH_CELLS};
pub use config::{check_grouping, EncoderChoice, ExperimentConfig, Selection, SynthSource};
pub use report::{
    emit_reports, read_manifest, read_records, read_samples, report_run, sample_rows, summarize, write_records,
    write_run, write_samples, Manifest, RecordRow, SampleRow, SelectionSummary, Stat, SummaryRow, TimingRow, MANIFEST,
    RECORDS, REPORTS, SAMPLES, TIMINGS,
};
pub use runner::{
    select_encoder, Candidate, Protocol, RunKind, RunOutput, RunRecord, RunResult, Runner, SelectionOutcome,
};
