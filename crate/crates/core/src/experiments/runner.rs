use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;

use super::cells::{check_plan, grid_cells, search_cells, Cell, EncoderSlot, GRID_CELLS, SEARCH_CELLS};
use super::config::{EncoderChoice, ExperimentConfig, Selection};
use crate::data::Dataset;
use crate::encoders::{Architecture, ViewSchema};
use crate::fusion::{Component, MvlModel, Strategy};
use crate::metrics::MetricsReport;
use crate::tensor::Tensor;
use crate::training::{predict, save_checkpoint, train};
use crate::{Error, Result};

const PREDICT_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunKind {
    /// Multi-view model of a protocol cell.
    Mvl,
    /// Single-view baseline.
    Svl,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Mvl => "mvl",
            RunKind::Svl => "svl",
        }
    }
}

/// Output of one successful training run.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: MetricsReport,
    pub probs: Tensor,
    pub params: usize,
    pub inference_params: usize,
    /// Epochs run (summed over ensemble members).
    pub epochs: usize,
    /// `None` for ensembles, whose members stop independently.
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub fingerprint: String,
    pub kind: RunKind,
    pub cell: String,
    pub encoder: Architecture,
    pub strategy: Strategy,
    pub component: Component,
    pub views: Vec<String>,
    pub repetition: usize,
    pub seed: u64,
    /// The error message of a failed run.
    pub outcome: std::result::Result<RunResult, String>,
    /// Relative to the run directory.
    pub checkpoint: Option<String>,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

impl RunRecord {
    pub fn result(&self) -> Option<&RunResult> {
        self.outcome.as_ref().ok()
    }
}

/// Ranking of the candidates of an encoder selection.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub cell: String,
    pub encoder: Architecture,
    /// Mean selection metric over repetitions; `None` if a run failed or
    /// the metric is undefined.
    pub mean: Option<f64>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    /// What was selected: `search`, or the strategy of component cells.
    pub scope: String,
    pub metric: Selection,
    pub candidates: Vec<Candidate>,
    pub winner: Architecture,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Protocol {
    Single,
    Grid,
    Search,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Single => "train",
            Protocol::Grid => "grid",
            Protocol::Search => "search",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub protocol: Protocol,
    /// Planned cells, before encoder resolution.
    pub plan: Vec<Cell>,
    pub records: Vec<RunRecord>,
    pub selections: Vec<SelectionOutcome>,
    /// Set when the reduced protocol stopped after phase 1, or when grid
    /// component cells had no encoder to select from.
    pub aborted: Option<String>,
}

/// Mean metric per candidate; the best mean wins, ties go to the smaller
/// model, then to the reporting order of the architectures.
pub fn select_encoder(scope: &str, records: &[&RunRecord], metric: Selection) -> Result<SelectionOutcome> {
    let mut candidates = Vec::new();
    for arch in Architecture::TEMPORAL {
        let runs: Vec<&RunRecord> = records.iter().copied().filter(|r| r.encoder == arch).collect();
        if runs.is_empty() {
            continue;
        }
        let values: Option<Vec<f64>> = runs.iter().map(|r| r.result().and_then(|x| metric.of(&x.report))).collect();
        let mean = values.map(|v| v.iter().sum::<f64>() / v.len() as f64);
        let params = runs.iter().find_map(|r| r.result()).map_or(0, |x| x.inference_params);
        candidates.push(Candidate {
            cell: runs[0].cell.clone(),
            encoder: arch,
            mean,
            params,
        });
    }
    let winner = candidates
        .iter()
        .filter_map(|c| c.mean.map(|m| (m, c)))
        .reduce(|best, next| {
            if next.0 > best.0 || (next.0 == best.0 && next.1.params < best.1.params) {
                next
            } else {
                best
            }
        })
        .map(|(_, c)| c.encoder)
        .ok_or_else(|| Error::Validation(format!("no candidate of `{scope}` has a defined {}", metric.name())))?;
    Ok(SelectionOutcome {
        scope: scope.to_string(),
        metric,
        candidates,
        winner,
    })
}

struct Task {
    kind: RunKind,
    cell: Cell,
    arch: Architecture,
    views: Vec<ViewSchema>,
    repetition: usize,
}

/// Executes protocol cells on one prepared dataset.
pub struct Runner {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
    jobs: usize,
    /// Checkpoints are written below `<run_dir>/checkpoints` when set.
    run_dir: Option<PathBuf>,
}

impl Runner {
    /// Validates `config` and prepares its data; nothing is trained yet.
    pub fn new(config: ExperimentConfig, jobs: usize, run_dir: Option<PathBuf>) -> Result<Self> {
        config.validate()?;
        let (train, test) = config.prepare_data()?;
        Ok(Self {
            config,
            train,
            test,
            jobs: jobs.max(1),
            run_dir,
        })
    }

    pub fn view_names(&self) -> Vec<String> {
        self.train.view_names().into_iter().map(String::from).collect()
    }

    /// The configured cell (fixed encoder, strategy, component).
    pub fn run_single(&self) -> Result<RunOutput> {
        let EncoderChoice::Fixed(arch) = self.config.encoder else {
            return Err(Error::Validation("`train` needs a fixed encoder; use `search` for the reduced protocol".into()));
        };
        let cell = Cell::fixed(arch, self.config.strategy, self.config.component);
        check_plan(&[cell], 1)?;
        let mut records = self.run_cells(&[cell])?;
        if self.config.baselines {
            records.extend(self.run_baselines(&[arch])?);
        }
        Ok(RunOutput {
            protocol: Protocol::Single,
            plan: vec![cell],
            records,
            selections: Vec::new(),
            aborted: None,
        })
    }

    /// The full protocol: 25 plain cells, then the 6 component cells.
    pub fn run_grid(&self) -> Result<RunOutput> {
        let plan = grid_cells(self.config.component_encoder);
        check_plan(&plan, GRID_CELLS)?;
        let (fixed, pending): (Vec<Cell>, Vec<Cell>) =
            plan.iter().partition(|c| matches!(c.encoder, EncoderSlot::Fixed(_)) && c.component == Component::None);
        let mut records = self.run_cells(&fixed)?;
        let mut selections: Vec<SelectionOutcome> = Vec::new();
        let mut skipped = Vec::new();
        let mut resolved = Vec::new();
        for cell in pending {
            let arch = match cell.encoder {
                EncoderSlot::Fixed(a) => a,
                EncoderSlot::BestOf(s) => {
                    if let Some(x) = selections.iter().find(|x| x.scope == s.name()) {
                        x.winner
                    } else {
                        let runs: Vec<&RunRecord> = records
                            .iter()
                            .filter(|r| r.strategy == s && r.component == Component::None)
                            .collect();
                        match select_encoder(s.name(), &runs, self.config.selection) {
                            Ok(outcome) => {
                                let w = outcome.winner;
                                selections.push(outcome);
                                w
                            }
                            Err(e) => {
                                skipped.push(format!("{}: {e}", cell.id()));
                                continue;
                            }
                        }
                    }
                }
                EncoderSlot::Selected => return Err(Error::Contract("selected encoder in the full grid".into())),
            };
            resolved.push(cell.resolved(arch));
        }
        records.extend(self.run_cells(&resolved)?);
        if self.config.baselines {
            records.extend(self.run_baselines(&Architecture::TEMPORAL)?);
        }
        Ok(RunOutput {
            protocol: Protocol::Grid,
            plan,
            records,
            selections,
            aborted: (!skipped.is_empty()).then(|| format!("cells skipped: {}", skipped.join("; "))),
        })
    }

    /// The reduced protocol: Input fusion with every encoder, selection,
    /// then the other strategies and components with the winner.
    pub fn run_search(&self) -> Result<RunOutput> {
        let plan = search_cells();
        check_plan(&plan, SEARCH_CELLS)?;
        let phase1: Vec<Cell> = plan.iter().copied().filter(|c| c.encoder != EncoderSlot::Selected).collect();
        let mut records = self.run_cells(&phase1)?;
        let failed: Vec<String> = records
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("{} rep {}: {e}", r.cell, r.repetition)))
            .collect();
        let mut output = RunOutput {
            protocol: Protocol::Search,
            plan: plan.clone(),
            records: Vec::new(),
            selections: Vec::new(),
            aborted: None,
        };
        if !failed.is_empty() {
            output.aborted = Some(format!("phase 1 failed: {}", failed.join("; ")));
            output.records = records;
            return Ok(output);
        }
        let runs: Vec<&RunRecord> = records.iter().collect();
        let selection = match select_encoder("search", &runs, self.config.selection) {
            Ok(s) => s,
            Err(e) => {
                output.aborted = Some(e.to_string());
                output.records = records;
                return Ok(output);
            }
        };
        let winner = selection.winner;
        let phase2: Vec<Cell> = plan
            .iter()
            .filter(|c| c.encoder == EncoderSlot::Selected && !(c.strategy == Strategy::Input && c.component == Component::None))
            .map(|c| c.resolved(winner))
            .collect();
        records.extend(self.run_cells(&phase2)?);
        if self.config.baselines {
            records.extend(self.run_baselines(&[winner])?);
        }
        output.records = records;
        output.selections.push(selection);
        Ok(output)
    }

    /// Single-view models: every view with every listed encoder (static
    /// views always use the MLP, once).
    pub fn run_baselines(&self, archs: &[Architecture]) -> Result<Vec<RunRecord>> {
        let mut tasks = Vec::new();
        for schema in self.train.schemas() {
            let archs: Vec<Architecture> = if schema.temporal { archs.to_vec() } else { vec![Architecture::Mlp] };
            for arch in archs {
                for repetition in 0..self.config.repetitions {
                    tasks.push(Task {
                        kind: RunKind::Svl,
                        cell: Cell::fixed(arch, Strategy::Input, Component::None),
                        arch,
                        views: vec![schema.clone()],
                        repetition,
                    });
                }
            }
        }
        self.execute(tasks)
    }

    /// Runs every repetition of cells whose encoders are fixed.
    pub fn run_cells(&self, cells: &[Cell]) -> Result<Vec<RunRecord>> {
        let mut tasks = Vec::new();
        for cell in cells {
            let EncoderSlot::Fixed(arch) = cell.encoder else {
                return Err(Error::Contract(format!("cell {} has an unresolved encoder", cell.id())));
            };
            for repetition in 0..self.config.repetitions {
                tasks.push(Task {
                    kind: RunKind::Mvl,
                    cell: *cell,
                    arch,
                    views: self.train.schemas().to_vec(),
                    repetition,
                });
            }
        }
        self.execute(tasks)
    }

    fn execute(&self, tasks: Vec<Task>) -> Result<Vec<RunRecord>> {
        if let Some(dir) = &self.run_dir {
            if self.config.checkpoints {
                let ck = dir.join("checkpoints");
                std::fs::create_dir_all(&ck).map_err(|e| Error::io(&ck, e))?;
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        Ok(pool.install(|| tasks.par_iter().map(|t| self.run_task(t)).collect()))
    }

    fn cell_name(&self, task: &Task) -> String {
        match task.kind {
            RunKind::Mvl => task.cell.id(),
            RunKind::Svl => format!("svl-{}-{}", task.arch.name(), task.views[0].name),
        }
    }

    fn run_task(&self, task: &Task) -> RunRecord {
        let seed = self.config.seed_base + task.repetition as u64;
        let cell = self.cell_name(task);
        let views: Vec<String> = task.views.iter().map(|v| v.name.clone()).collect();
        let fusion = self
            .config
            .fusion(task.arch, task.cell.strategy, task.cell.component, self.train.classes());
        let checkpoint = match (&self.run_dir, self.config.checkpoints) {
            (Some(_), true) => Some(format!("checkpoints/{cell}-rep{}.mvlc", task.repetition)),
            _ => None,
        };
        let mut times = (0.0, 0.0);
        let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<RunResult> {
            let mut model = match task.kind {
                RunKind::Mvl => MvlModel::new(fusion.clone(), task.views.clone(), seed)?,
                RunKind::Svl => MvlModel::single_view(task.views[0].clone(), &fusion, seed)?,
            };
            let t0 = Instant::now();
            let history = train(&mut model, &self.train, &self.config.train, seed)?;
            times.0 = t0.elapsed().as_secs_f64();
            let t1 = Instant::now();
            let probs = predict(&mut model, &self.test, PREDICT_CHUNK)?;
            times.1 = t1.elapsed().as_secs_f64();
            let report = MetricsReport::compute_scaled(&probs, self.test.labels(), self.config.entropy_scale)?;
            if let (Some(dir), Some(rel)) = (&self.run_dir, &checkpoint) {
                save_checkpoint(&model, &dir.join(rel))?;
            }
            let (epochs, best_epoch) = if history.members.is_empty() {
                (history.epochs.len(), Some(history.best_epoch))
            } else {
                (history.members.iter().map(|(_, h)| h.epochs.len()).sum(), None)
            };
            Ok(RunResult {
                report,
                probs,
                params: model.param_count(),
                inference_params: model.inference_param_count(),
                epochs,
                best_epoch,
            })
        }));
        let outcome = match outcome {
            Ok(Ok(r)) => Ok(r),
            Ok(Err(e)) => Err(e.to_string()),
            Err(panic) => Err(panic_message(panic.as_ref())),
        };
        let kind = task.kind.name();
        RunRecord {
            fingerprint: self.config.fingerprint(kind, &fusion, &views),
            kind: task.kind,
            checkpoint: checkpoint.filter(|_| outcome.is_ok()),
            cell,
            encoder: fusion.encoder.architecture,
            strategy: task.cell.strategy,
            component: task.cell.component,
            views,
            repetition: task.repetition,
            seed,
            outcome,
            train_seconds: times.0,
            predict_seconds: times.1,
        }
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into());
    format!("panic: {msg}")
}
