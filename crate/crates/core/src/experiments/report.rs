use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{check_grouping, ExperimentConfig};
use super::runner::{RunOutput, RunRecord};
use crate::data::{Dataset, Metadata};
use crate::metrics::{grouped_report, GroupKey, MetricsReport};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
pub const RECORDS: &str = "records.csv";
pub const REPORTS: &str = "reports";
pub const SAMPLES: &str = "samples";
pub const TIMINGS: &str = "timings.csv";

/// One line of `records.csv`. Wall-clock times are kept out of this file
/// (see [`TimingRow`]) so that it depends on the configuration only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub fingerprint: String,
    pub kind: String,
    pub cell: String,
    pub encoder: String,
    pub strategy: String,
    pub component: String,
    pub views: String,
    pub repetition: usize,
    pub seed: u64,
    pub status: String,
    pub error: String,
    pub samples: Option<usize>,
    pub aa: Option<f64>,
    pub kappa: Option<f64>,
    pub f1_macro: Option<f64>,
    pub f1_positive: Option<f64>,
    pub auc_roc: Option<f64>,
    pub max_probability: Option<f64>,
    pub prediction_entropy: Option<f64>,
    pub params: Option<usize>,
    pub inference_params: Option<usize>,
    pub epochs: Option<usize>,
    pub best_epoch: Option<usize>,
    pub checkpoint: String,
}

impl RecordRow {
    pub fn from_record(r: &RunRecord) -> Self {
        let res = r.result();
        let rep = res.map(|x| &x.report);
        Self {
            fingerprint: r.fingerprint.clone(),
            kind: r.kind.name().to_string(),
            cell: r.cell.clone(),
            encoder: r.encoder.name().to_string(),
            strategy: r.strategy.name().to_string(),
            component: r.component.name().to_string(),
            views: r.views.join("+"),
            repetition: r.repetition,
            seed: r.seed,
            status: if res.is_some() { "ok" } else { "failed" }.to_string(),
            error: r.outcome.as_ref().err().cloned().unwrap_or_default(),
            samples: rep.map(|x| x.samples),
            aa: rep.map(|x| x.aa),
            kappa: rep.and_then(|x| x.kappa),
            f1_macro: rep.map(|x| x.f1_macro),
            f1_positive: rep.and_then(|x| x.f1_positive),
            auc_roc: rep.and_then(|x| x.auc_roc),
            max_probability: rep.map(|x| x.max_probability),
            prediction_entropy: rep.map(|x| x.prediction_entropy),
            params: res.map(|x| x.params),
            inference_params: res.map(|x| x.inference_params),
            epochs: res.map(|x| x.epochs),
            best_epoch: res.and_then(|x| x.best_epoch),
            checkpoint: r.checkpoint.clone().unwrap_or_default(),
        }
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub kind: String,
    pub cell: String,
    pub repetition: usize,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

/// Per-sample prediction of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub repetition: usize,
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
    pub meta: Metadata,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Format(format!("{}: {e}", path.display())),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|x| x.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_records(path: &Path, rows: &[RecordRow]) -> Result<()> {
    write_rows(path, rows)
}

pub fn read_records(path: &Path) -> Result<Vec<RecordRow>> {
    read_rows(path)
}

pub fn sample_rows(record: &RunRecord, test: &Dataset) -> Vec<SampleRow> {
    let Some(res) = record.result() else {
        return Vec::new();
    };
    let predicted = crate::metrics::argmax_rows(&res.probs);
    (0..test.len())
        .map(|i| SampleRow {
            repetition: record.repetition,
            index: i,
            label: test.labels()[i],
            predicted: predicted[i],
            probs: res.probs.row(i).to_vec(),
            meta: test.metadata()[i].clone(),
        })
        .collect()
}

const SAMPLE_HEAD: [&str; 11] = [
    "repetition",
    "index",
    "label",
    "predicted",
    "correct",
    "latitude",
    "longitude",
    "year",
    "continent",
    "country",
    "is_test",
];

/// Per-sample dump: one row per (repetition, test sample), with the
/// location for external mapping and the class probabilities.
pub fn write_samples(path: &Path, rows: &[SampleRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let k = rows.first().map_or(0, |r| r.probs.len());
    let mut head: Vec<String> = SAMPLE_HEAD.iter().map(|s| s.to_string()).collect();
    head.extend((0..k).map(|c| format!("p{c}")));
    w.write_record(&head).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let mut rec = vec![
            r.repetition.to_string(),
            r.index.to_string(),
            r.label.to_string(),
            r.predicted.to_string(),
            u8::from(r.label == r.predicted).to_string(),
            r.meta.latitude.to_string(),
            r.meta.longitude.to_string(),
            r.meta.year.to_string(),
            r.meta.continent.clone(),
            r.meta.country.clone(),
            u8::from(r.meta.is_test).to_string(),
        ];
        rec.extend(r.probs.iter().map(|p| p.to_string()));
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_samples(path: &Path) -> Result<Vec<SampleRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let bad = |what: &str| Error::Format(format!("{}: bad {what}", path.display()));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() < SAMPLE_HEAD.len() + 2 {
            return Err(bad("row width"));
        }
        let num = |i: usize| -> Result<usize> { rec[i].parse().map_err(|_| bad(SAMPLE_HEAD[i])) };
        let float = |i: usize| -> Result<f64> { rec[i].parse().map_err(|_| bad(SAMPLE_HEAD[i])) };
        out.push(SampleRow {
            repetition: num(0)?,
            index: num(1)?,
            label: num(2)?,
            predicted: num(3)?,
            meta: Metadata {
                latitude: float(5)?,
                longitude: float(6)?,
                year: rec[7].parse().map_err(|_| bad("year"))?,
                continent: rec[8].to_string(),
                country: rec[9].to_string(),
                is_test: &rec[10] == "1",
            },
            probs: (SAMPLE_HEAD.len()..rec.len())
                .map(|i| rec[i].parse().map_err(|_| bad("probability")))
                .collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

/// Mean and sample standard deviation; a single value has deviation 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n == 1 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }

    fn percent(s: Option<Stat>) -> String {
        s.map_or("-".into(), |s| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std))
    }

    fn plain(s: Option<Stat>) -> String {
        s.map_or("-".into(), |s| format!("{:.3} ± {:.3}", s.mean, s.std))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub kind: String,
    pub cell: String,
    pub encoder: String,
    pub strategy: String,
    pub component: String,
    pub views: String,
    pub runs: usize,
    pub failed: usize,
    pub aa: Option<Stat>,
    pub kappa: Option<Stat>,
    pub f1_macro: Option<Stat>,
    pub max_probability: Option<Stat>,
    pub prediction_entropy: Option<Stat>,
    pub params: Option<usize>,
}

fn ordered_groups<T>(items: &[T], key: impl Fn(&T) -> String) -> Vec<(String, Vec<&T>)> {
    let mut out: Vec<(String, Vec<&T>)> = Vec::new();
    for it in items {
        let k = key(it);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(it),
            None => out.push((k, vec![it])),
        }
    }
    out
}

/// One row per cell (in order of first appearance) with mean ± std over
/// the successful repetitions.
pub fn summarize(rows: &[RecordRow]) -> Vec<SummaryRow> {
    ordered_groups(rows, |r| format!("{}/{}", r.kind, r.cell))
        .into_iter()
        .map(|(_, g)| {
            let ok: Vec<&RecordRow> = g.iter().copied().filter(|r| r.ok()).collect();
            let col = |f: fn(&RecordRow) -> Option<f64>| -> Option<Stat> {
                let v: Option<Vec<f64>> = ok.iter().map(|r| f(r)).collect();
                v.and_then(|v| Stat::of(&v))
            };
            SummaryRow {
                kind: g[0].kind.clone(),
                cell: g[0].cell.clone(),
                encoder: g[0].encoder.clone(),
                strategy: g[0].strategy.clone(),
                component: g[0].component.clone(),
                views: g[0].views.clone(),
                runs: g.len(),
                failed: g.len() - ok.len(),
                aa: col(|r| r.aa),
                kappa: col(|r| r.kappa),
                f1_macro: col(|r| r.f1_macro),
                max_probability: col(|r| r.max_probability),
                prediction_entropy: col(|r| r.prediction_entropy),
                params: ok.first().and_then(|r| r.inference_params),
            }
        })
        .collect()
}

fn markdown(head: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "| {} |", head.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
    s
}

fn write_table(dir: &Path, name: &str, title: &str, head: &[&str], rows: &[Vec<String>]) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{name}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_err(&csv_path, e))?;
    w.write_record(head).map_err(|e| csv_err(&csv_path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_err(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let md_path = dir.join(format!("{name}.md"));
    let text = format!("# {title}\n\n{}", markdown(head, rows));
    fs::write(&md_path, text).map_err(|e| Error::io(&md_path, e))?;
    Ok(vec![csv_path, md_path])
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Scores of every repetition of one cell, rebuilt from its sample dump.
fn per_repetition(samples: &[SampleRow]) -> Result<Vec<(Tensor, Vec<usize>, Vec<Metadata>)>> {
    let mut reps: BTreeMap<usize, Vec<&SampleRow>> = BTreeMap::new();
    for s in samples {
        reps.entry(s.repetition).or_default().push(s);
    }
    reps.into_values()
        .map(|rows| {
            let k = rows[0].probs.len();
            let data: Vec<f64> = rows.iter().flat_map(|r| r.probs.iter().copied()).collect();
            let probs = Tensor::new(vec![rows.len(), k], data)?;
            Ok((probs, rows.iter().map(|r| r.label).collect(), rows.iter().map(|r| r.meta.clone()).collect()))
        })
        .collect()
}

fn grouped_rows(cells: &[(String, Vec<SampleRow>)], key: GroupKey) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for (cell, samples) in cells {
        let mut groups: BTreeMap<String, Vec<MetricsReport>> = BTreeMap::new();
        for (probs, labels, meta) in per_repetition(samples)? {
            for (g, rep) in grouped_report(&probs, &labels, &meta, key)? {
                groups.entry(g).or_default().push(rep);
            }
        }
        for (g, reps) in groups {
            let stat = |f: fn(&MetricsReport) -> Option<f64>| {
                let v: Option<Vec<f64>> = reps.iter().map(f).collect();
                v.and_then(|v| Stat::of(&v))
            };
            out.push(vec![
                cell.clone(),
                g,
                reps[0].samples.to_string(),
                Stat::percent(stat(|r| Some(r.aa))),
                Stat::percent(stat(|r| r.kappa)),
                Stat::percent(stat(|r| Some(r.f1_macro))),
            ]);
        }
    }
    Ok(out)
}

fn per_class_rows(cells: &[(String, Vec<SampleRow>)]) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for (cell, samples) in cells {
        let reports = per_repetition(samples)?
            .into_iter()
            .map(|(p, y, _)| MetricsReport::compute(&p, &y))
            .collect::<Result<Vec<_>>>()?;
        let Some(first) = reports.first() else { continue };
        for k in 0..first.per_class.len() {
            let stat = |f: fn(&crate::metrics::ClassScores) -> f64| {
                Stat::of(&reports.iter().map(|r| f(&r.per_class[k])).collect::<Vec<_>>())
            };
            let support: u64 = first.confusion.rows().get(k).map_or(0, |row| row.iter().sum());
            out.push(vec![
                cell.clone(),
                k.to_string(),
                support.to_string(),
                Stat::percent(stat(|c| c.precision)),
                Stat::percent(stat(|c| c.recall)),
                Stat::percent(stat(|c| c.f1)),
            ]);
        }
    }
    Ok(out)
}

/// Writes every table below `<run_dir>/reports` from the records, the
/// per-sample dumps and the raw timings; returns the written paths.
pub fn emit_reports(
    run_dir: &Path,
    rows: &[RecordRow],
    samples: &[(String, Vec<SampleRow>)],
    timings: &[TimingRow],
    group_by: &[GroupKey],
) -> Result<Vec<PathBuf>> {
    let dir = run_dir.join(REPORTS);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut written = Vec::new();
    let summary = summarize(rows);

    let mvl: Vec<&SummaryRow> = summary.iter().filter(|s| s.kind == "mvl").collect();
    let head = [
        "cell",
        "strategy",
        "encoder",
        "component",
        "runs",
        "failed",
        "AA",
        "kappa",
        "F1 macro",
        "max. probability",
        "prediction entropy",
        "params",
    ];
    let table: Vec<Vec<String>> = mvl
        .iter()
        .map(|s| {
            vec![
                s.cell.clone(),
                s.strategy.clone(),
                s.encoder.clone(),
                s.component.clone(),
                s.runs.to_string(),
                s.failed.to_string(),
                Stat::percent(s.aa),
                Stat::percent(s.kappa),
                Stat::percent(s.f1_macro),
                Stat::plain(s.max_probability),
                Stat::plain(s.prediction_entropy),
                fmt_opt(s.params),
            ]
        })
        .collect();
    written.extend(write_table(&dir, "summary", "Summary (mean ± std over repetitions, ×100)", &head, &table)?);

    let svl: Vec<&SummaryRow> = summary.iter().filter(|s| s.kind == "svl").collect();
    if !svl.is_empty() {
        let mut best: BTreeMap<&str, (&str, f64)> = BTreeMap::new();
        for s in &svl {
            let m = s.kappa.map_or(f64::NEG_INFINITY, |k| k.mean);
            let e = best.entry(s.views.as_str()).or_insert((s.cell.as_str(), m));
            if m > e.1 {
                *e = (s.cell.as_str(), m);
            }
        }
        let head = ["view", "encoder", "cell", "runs", "failed", "AA", "kappa", "F1 macro", "best"];
        let table: Vec<Vec<String>> = svl
            .iter()
            .map(|s| {
                vec![
                    s.views.clone(),
                    s.encoder.clone(),
                    s.cell.clone(),
                    s.runs.to_string(),
                    s.failed.to_string(),
                    Stat::percent(s.aa),
                    Stat::percent(s.kappa),
                    Stat::percent(s.f1_macro),
                    if best.get(s.views.as_str()).map(|b| b.0) == Some(s.cell.as_str()) { "*" } else { "" }.into(),
                ]
            })
            .collect();
        written.extend(write_table(&dir, "baselines", "Single-view baselines (* = best per view by kappa)", &head, &table)?);
    }

    let mvl_samples: Vec<(String, Vec<SampleRow>)> = samples
        .iter()
        .filter(|(c, _)| !c.starts_with("svl-"))
        .cloned()
        .collect();
    for &key in group_by {
        match key {
            GroupKey::Class => {
                let head = ["cell", "class", "support", "precision", "recall", "F1"];
                written.extend(write_table(&dir, "per_class", "Per-class scores", &head, &per_class_rows(&mvl_samples)?)?);
            }
            key => {
                let head = ["cell", key.name(), "samples", "AA", "kappa", "F1 macro"];
                let title = format!("Scores by {}", key.name());
                let rows = grouped_rows(&mvl_samples, key)?;
                written.extend(write_table(&dir, &format!("by_{}", key.name()), &title, &head, &rows)?);
            }
        }
    }

    let head = ["cell", "runs", "train s", "train s std", "infer s", "infer s std"];
    let table: Vec<Vec<String>> = ordered_groups(timings, |t| format!("{}/{}", t.kind, t.cell))
        .into_iter()
        .filter(|(_, g)| g[0].kind == "mvl")
        .map(|(_, g)| {
            let tr = Stat::of(&g.iter().map(|t| t.train_seconds).collect::<Vec<_>>());
            let inf = Stat::of(&g.iter().map(|t| t.predict_seconds).collect::<Vec<_>>());
            vec![
                g[0].cell.clone(),
                g.len().to_string(),
                fmt_opt(tr.map(|s| format!("{:.3}", s.mean))),
                fmt_opt(tr.map(|s| format!("{:.3}", s.std))),
                fmt_opt(inf.map(|s| format!("{:.4}", s.mean))),
                fmt_opt(inf.map(|s| format!("{:.4}", s.std))),
            ]
        })
        .collect();
    written.extend(write_table(&dir, "timing", "Training and inference time per cell (seconds)", &head, &table)?);
    Ok(written)
}

/// `manifest.json` of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub protocol: String,
    pub config: ExperimentConfig,
    pub views: Vec<String>,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Planned cell ids, before encoder resolution.
    pub plan: Vec<String>,
    pub cells: Vec<String>,
    pub fingerprints: BTreeMap<String, String>,
    pub selections: Vec<SelectionSummary>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub scope: String,
    pub metric: String,
    pub winner: String,
    /// `(cell, mean metric, inference parameters)`.
    pub candidates: Vec<(String, Option<f64>, usize)>,
}

fn selection_markdown(output: &RunOutput) -> String {
    let mut s = String::from("# Encoder selection\n");
    for sel in &output.selections {
        let _ = writeln!(
            s,
            "\n## {}\n\nmetric: mean {} over repetitions; ties go to fewer parameters.\n",
            sel.scope,
            sel.metric.name()
        );
        let rows: Vec<Vec<String>> = sel
            .candidates
            .iter()
            .map(|c| {
                vec![
                    c.cell.clone(),
                    c.mean.map_or("-".into(), |m| format!("{m:.6}")),
                    c.params.to_string(),
                    if c.encoder == sel.winner { "*" } else { "" }.into(),
                ]
            })
            .collect();
        s.push_str(&markdown(&["cell", "mean", "params", "selected"], &rows));
    }
    if let Some(a) = &output.aborted {
        let _ = writeln!(s, "\naborted: {a}");
    }
    s
}

/// Writes a complete run directory: manifest, records, per-sample dumps,
/// raw timings and the report tables.
pub fn write_run(run_dir: &Path, runner: &super::runner::Runner, output: &RunOutput) -> Result<Vec<PathBuf>> {
    let reports = run_dir.join(REPORTS);
    let sample_dir = reports.join(SAMPLES);
    fs::create_dir_all(&sample_dir).map_err(|e| Error::io(&sample_dir, e))?;

    let rows: Vec<RecordRow> = output.records.iter().map(RecordRow::from_record).collect();
    let mut fingerprints = BTreeMap::new();
    for r in &rows {
        fingerprints.insert(r.cell.clone(), r.fingerprint.clone());
    }
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        protocol: output.protocol.name().to_string(),
        config: runner.config.clone(),
        views: runner.view_names(),
        train_samples: runner.train.len(),
        test_samples: runner.test.len(),
        plan: output.plan.iter().map(|c| c.id()).collect(),
        cells: ordered_groups(&rows, |r| r.cell.clone()).into_iter().map(|(c, _)| c).collect(),
        fingerprints,
        selections: output
            .selections
            .iter()
            .map(|s| SelectionSummary {
                scope: s.scope.clone(),
                metric: s.metric.name().to_string(),
                winner: s.winner.name().to_string(),
                candidates: s.candidates.iter().map(|c| (c.cell.clone(), c.mean, c.params)).collect(),
            })
            .collect(),
        aborted: output.aborted.clone(),
    };
    let path = run_dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    write_records(&run_dir.join(RECORDS), &rows)?;

    let mut samples: Vec<(String, Vec<SampleRow>)> = Vec::new();
    for r in &output.records {
        let s = sample_rows(r, &runner.test);
        match samples.iter_mut().find(|(c, _)| *c == r.cell) {
            Some((_, v)) => v.extend(s),
            None => samples.push((r.cell.clone(), s)),
        }
    }
    for (cell, s) in &samples {
        write_samples(&sample_dir.join(format!("{cell}.csv")), s)?;
    }
    let timings: Vec<TimingRow> = output
        .records
        .iter()
        .map(|r| TimingRow {
            kind: r.kind.name().to_string(),
            cell: r.cell.clone(),
            repetition: r.repetition,
            train_seconds: r.train_seconds,
            predict_seconds: r.predict_seconds,
        })
        .collect();
    write_rows(&reports.join(TIMINGS), &timings)?;
    if !output.selections.is_empty() || output.aborted.is_some() {
        let p = reports.join("selection.md");
        fs::write(&p, selection_markdown(output)).map_err(|e| Error::io(&p, e))?;
    }
    let mut written = vec![run_dir.join(MANIFEST), run_dir.join(RECORDS)];
    written.extend(emit_reports(run_dir, &rows, &samples, &timings, &runner.config.group_by)?);
    Ok(written)
}

pub fn read_manifest(run_dir: &Path) -> Result<Manifest> {
    let path = run_dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Re-emits the report tables of an existing run directory.
pub fn report_run(run_dir: &Path, group_by: Option<&[GroupKey]>) -> Result<Vec<PathBuf>> {
    let manifest = read_manifest(run_dir)?;
    let rows = read_records(&run_dir.join(RECORDS))?;
    let reports = run_dir.join(REPORTS);
    let mut samples = Vec::new();
    for (cell, _) in ordered_groups(&rows, |r| r.cell.clone()) {
        let p = reports.join(SAMPLES).join(format!("{cell}.csv"));
        if p.exists() {
            samples.push((cell, read_samples(&p)?));
        }
    }
    let t = reports.join(TIMINGS);
    let timings = if t.exists() { read_rows(&t)? } else { Vec::new() };
    let keys = group_by.unwrap_or(&manifest.config.group_by);
    let meta: Vec<Metadata> = samples.iter().flat_map(|(_, s)| s.iter().map(|r| r.meta.clone())).collect();
    check_grouping(&meta, keys)?;
    emit_reports(run_dir, &rows, &samples, &timings, keys)
}
