//! `mvl`: multi-view crop classification experiments from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use mvl_core::data::{
    entropy_report, import_csv, load_dataset, save_dataset, synth_generate, ImportManifest, SynthKind, SynthSpec,
};
use mvl_core::encoders::{encoder_count, table_targets, Architecture, EncoderConfig, ViewSchema, PREDICTION_HEAD_TARGET};
use mvl_core::experiments::{
    report_run, summarize, write_run, ExperimentConfig, RecordRow, RunOutput, Runner, Stat,
};
use mvl_core::fusion::PredictionHead;
use mvl_core::metrics::GroupKey;
use mvl_core::Error;

#[derive(Parser)]
#[command(name = "mvl", version, about = "Multi-view time-series classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-view dataset (MVDS).
    Synth {
        #[arg(long, default_value = "complementary")]
        kind: SynthKind,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 600)]
        test: usize,
        #[arg(long, default_value_t = 0.2)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert per-view CSV files into an MVDS dataset.
    Import {
        /// Import manifest (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print per-encoder parameter counts next to the reference table.
    InspectParams,
    /// Per-view, per-feature spectral entropy of a dataset.
    Entropy {
        dataset: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one cell (encoder x strategy x component) over all repetitions.
    Train(RunArgs),
    /// Full protocol: 31 cells.
    Grid(RunArgs),
    /// Reduced protocol: encoder search on Input fusion, then 11 cells.
    Search(RunArgs),
    /// Re-emit the report tables of a run directory from its records.
    Report {
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated grouping keys (class, year, continent, country).
        #[arg(long, value_delimiter = ',')]
        group_by: Option<Vec<String>>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `seed_base`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `repetitions`.
    #[arg(long)]
    reps: Option<usize>,
    /// Parallel training jobs (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Run directory; overrides `output`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    ExitCode::from(execute(std::env::args_os()))
}

/// Parses `args`, runs the command and returns the process exit code.
fn execute<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

/// 1 for anything the user can fix in their inputs, 2 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Validation(_)
            | Error::MissingField(_)
            | Error::Schema(_)
            | Error::Label(_)
            | Error::Format(_)
            | Error::Truncated(_)
            | Error::Alignment(_)
            | Error::DegenerateClass(_)
            | Error::DegenerateTask(_),
        ) => 1,
        Some(_) => 2,
        None if e.is::<UsageError>() => 1,
        None => 2,
    }
}

#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(command: Command) -> anyhow::Result<u8> {
    match command {
        Command::Synth {
            kind,
            train,
            test,
            noise,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                kind,
                train,
                test,
                noise,
                ..SynthSpec::default()
            };
            let data = synth_generate(&spec, seed)?;
            save_dataset(&data, &out)?;
            println!("wrote {} samples ({train} train, {test} test) to {}", data.len(), out.display());
        }
        Command::Import { config, out } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let base = config.parent().unwrap_or(Path::new("."));
            let manifest = ImportManifest::from_toml(&text)?.resolve(base);
            let (data, report) = import_csv(&manifest)?;
            save_dataset(&data, &out)?;
            println!(
                "imported {} samples, dropped {} incomplete, wrote {}",
                report.imported,
                report.dropped,
                out.display()
            );
        }
        Command::InspectParams => inspect_params(),
        Command::Entropy { dataset, out } => {
            let report = entropy_report(&load_dataset(&dataset)?)?;
            let csv = report.to_csv()?;
            match out {
                Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{csv}"),
            }
            for (view, mean) in &report.view_means {
                eprintln!("{view:<12} mean spectral entropy {mean:.4}");
            }
        }
        Command::Train(args) => return experiment(args, |r| r.run_single()),
        Command::Grid(args) => return experiment(args, |r| r.run_grid()),
        Command::Search(args) => return experiment(args, |r| r.run_search()),
        Command::Report { out, group_by } => {
            let keys = group_by.map(|v| v.iter().map(|k| group_key(k)).collect::<Result<Vec<_>, _>>()).transpose()?;
            for p in report_run(&out, keys.as_deref())? {
                println!("{}", p.display());
            }
        }
    }
    Ok(0)
}

fn group_key(s: &str) -> Result<GroupKey, UsageError> {
    match s.trim() {
        "class" => Ok(GroupKey::Class),
        "year" => Ok(GroupKey::Year),
        "continent" => Ok(GroupKey::Continent),
        "country" => Ok(GroupKey::Country),
        other => Err(UsageError(format!("unknown grouping key `{other}`"))),
    }
}

fn inspect_params() {
    println!("{:<8} {:<11} {:>8} {:>9}  status", "encoder", "view", "count", "reference");
    for t in table_targets() {
        let schema = ViewSchema::canonical(t.view).expect("reference views are canonical");
        let count = encoder_count(&schema, &EncoderConfig::new(t.architecture));
        let status = match (t.gated, count == t.count) {
            (_, true) => "match",
            (true, false) => "MISMATCH",
            (false, false) => "reference only",
        };
        println!("{:<8} {:<11} {count:>8} {:>9}  {status}", t.architecture.name(), t.view, t.count);
        if !t.note.is_empty() && count != t.count {
            println!("{:>30}  note: {}", "", t.note);
        }
    }
    let head = PredictionHead::param_count(5 * 64, 2);
    let status = if head == PREDICTION_HEAD_TARGET { "match" } else { "MISMATCH" };
    println!("{:<8} {:<11} {head:>8} {PREDICTION_HEAD_TARGET:>9}  {status}", "head", "320->2");
    for arch in [Architecture::Tae, Architecture::Ltae] {
        let c = EncoderConfig::new(arch);
        let count = |v: &str| encoder_count(&ViewSchema::canonical(v).expect("canonical view"), &c);
        let d1 = count("optical") - count("radar");
        let d2 = count("radar") - count("ndvi");
        let status = if (d1, d2) == (594, 66) { "match" } else { "MISMATCH" };
        println!("{:<8} {:<11} {d1:>8} {:>9}  {status}", arch.name(), "opt-radar", 594);
        println!("{:<8} {:<11} {d2:>8} {:>9}  {status}", arch.name(), "radar-ndvi", 66);
    }
}

fn experiment(args: RunArgs, protocol: impl FnOnce(&Runner) -> mvl_core::Result<RunOutput>) -> anyhow::Result<u8> {
    let mut config = ExperimentConfig::load(&args.config).map_err(|e| match e {
        Error::Io { .. } => Error::Config(format!("{:#}", anyhow::Error::from(e))),
        e => e,
    })?;
    if let Some(s) = args.seed {
        config.seed_base = s;
    }
    if let Some(r) = args.reps {
        config.repetitions = r;
    }
    if let Some(o) = args.out {
        config.output = o;
    }
    let jobs = match args.jobs {
        Some(0) => bail!(UsageError("--jobs must be >= 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let run_dir = config.output.clone();
    let runner = Runner::new(config, jobs, Some(run_dir.clone()))?;
    let started = Instant::now();
    let out = protocol(&runner)?;
    write_run(&run_dir, &runner, &out)?;

    let rows: Vec<RecordRow> = out.records.iter().map(RecordRow::from_record).collect();
    let pct = |s: Option<Stat>| s.map_or("-".to_string(), |s| format!("{:6.2} ± {:5.2}", 100.0 * s.mean, 100.0 * s.std));
    println!("{:<4} {:<28} {:>15} {:>15} {:>6}", "kind", "cell", "AA %", "kappa %", "failed");
    for s in summarize(&rows) {
        println!("{:<4} {:<28} {:>15} {:>15} {:>6}", s.kind, s.cell, pct(s.aa), pct(s.kappa), s.failed);
    }
    let failed = rows.iter().filter(|r| !r.ok()).count();
    eprintln!(
        "{} runs ({failed} failed) in {:.1}s; results in {}",
        rows.len(),
        started.elapsed().as_secs_f64(),
        run_dir.display()
    );
    if let Some(reason) = &out.aborted {
        eprintln!("aborted: {reason}");
        return Ok(2);
    }
    Ok(0)
}

#[cfg(test)]
mod tests;
