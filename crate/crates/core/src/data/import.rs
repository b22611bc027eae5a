//! CSV interchange.
//!
//! Each view is one wide CSV: a header row, then `id, v_0, …, v_{T·D−1}`
//! per sample (time-major, so value `t·D + d` is channel `d` at step `t`).
//! The label CSV has the columns `id,label` and optionally
//! `country,continent,year,latitude,longitude,is_test`.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Metadata, Task};
use crate::encoders::ViewSchema;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewFile {
    pub name: String,
    pub path: PathBuf,
    #[serde(default = "default_true")]
    pub temporal: bool,
    #[serde(default)]
    pub steps: usize,
    pub channels: usize,
}

fn default_true() -> bool {
    true
}

impl ViewFile {
    pub fn schema(&self) -> ViewSchema {
        if self.temporal {
            ViewSchema::temporal(&self.name, self.steps, self.channels)
        } else {
            ViewSchema::fixed(&self.name, self.channels)
        }
    }
}

/// Import manifest (TOML); relative paths resolve against `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportManifest {
    pub task: Task,
    pub labels: PathBuf,
    pub views: Vec<ViewFile>,
}

impl ImportManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("import manifest: {e}")))
    }

    pub fn resolve(mut self, base: &Path) -> Self {
        if self.labels.is_relative() {
            self.labels = base.join(&self.labels);
        }
        for v in &mut self.views {
            if v.path.is_relative() {
                v.path = base.join(&v.path);
            }
        }
        self
    }
}

#[derive(Debug, Deserialize)]
struct LabelRow {
    id: String,
    label: usize,
    #[serde(default)]
    country: String,
    #[serde(default)]
    continent: String,
    #[serde(default)]
    year: i32,
    #[serde(default)]
    latitude: f64,
    #[serde(default)]
    longitude: f64,
    #[serde(default)]
    is_test: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportReport {
    pub imported: usize,
    /// Samples dropped because at least one view had no row for them.
    pub dropped: usize,
}

fn read_view(file: &ViewFile) -> Result<HashMap<String, Vec<f32>>> {
    let schema = file.schema();
    schema.validate()?;
    let mut reader = csv::Reader::from_path(&file.path)?;
    let mut rows = HashMap::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec?;
        let at = || format!("{}:{}", file.path.display(), line + 2);
        if rec.len() != schema.sample_len() + 1 {
            return Err(Error::Validation(format!(
                "{}: {} columns, expected id + {}",
                at(),
                rec.len(),
                schema.sample_len()
            )));
        }
        let id = rec[0].to_string();
        let values = rec
            .iter()
            .skip(1)
            .map(|c| {
                c.trim()
                    .parse::<f32>()
                    .map_err(|_| Error::Validation(format!("{}: non-numeric cell `{c}`", at())))
            })
            .collect::<Result<Vec<f32>>>()?;
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::Validation(format!("{}: duplicate id `{id}`", at())));
        }
    }
    Ok(rows)
}

/// Reads the view and label files into a dataset, in label-file order.
///
/// A labelled sample missing from some (but not all) views is dropped and
/// counted; a labelled sample absent from every view, or a view row without
/// a label, is an error.
pub fn import_csv(manifest: &ImportManifest) -> Result<(Dataset, ImportReport)> {
    if manifest.views.is_empty() {
        return Err(Error::Config("import manifest lists no views".into()));
    }
    let views: Vec<HashMap<String, Vec<f32>>> = manifest.views.iter().map(read_view).collect::<Result<_>>()?;
    let mut reader = csv::Reader::from_path(&manifest.labels)?;
    let rows: Vec<LabelRow> = reader.deserialize().collect::<std::result::Result<_, _>>()?;
    let labelled: HashSet<&str> = rows.iter().map(|r| r.id.as_str()).collect();
    for (file, rows) in manifest.views.iter().zip(&views) {
        if let Some(id) = rows.keys().find(|id| !labelled.contains(id.as_str())) {
            return Err(Error::Validation(format!(
                "id `{id}` in {} has no label row",
                file.path.display()
            )));
        }
    }
    let mut blocks = vec![Vec::new(); views.len()];
    let (mut labels, mut metadata) = (Vec::new(), Vec::new());
    let mut dropped = 0;
    for row in rows {
        let present = views.iter().filter(|v| v.contains_key(&row.id)).count();
        if present == 0 {
            return Err(Error::Validation(format!("labelled id `{}` appears in no view file", row.id)));
        }
        if present < views.len() {
            dropped += 1;
            continue;
        }
        for (block, v) in blocks.iter_mut().zip(&views) {
            block.extend_from_slice(&v[&row.id]);
        }
        labels.push(row.label);
        metadata.push(Metadata {
            country: row.country,
            continent: row.continent,
            year: row.year,
            latitude: row.latitude,
            longitude: row.longitude,
            is_test: row.is_test,
        });
    }
    let schemas = manifest.views.iter().map(ViewFile::schema).collect();
    let dataset = Dataset::new(manifest.task, schemas, blocks, labels, metadata)?;
    let report = ImportReport {
        imported: dataset.len(),
        dropped,
    };
    Ok((dataset, report))
}
