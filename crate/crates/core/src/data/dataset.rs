use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MultiViewBatch;
use crate::encoders::ViewSchema;
use crate::rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Crop vs non-crop.
    Binary,
    /// Nine crop groups plus non-crop.
    Multicrop,
}

impl Task {
    pub fn classes(self) -> usize {
        match self {
            Task::Binary => 2,
            Task::Multicrop => 10,
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multicrop" => Ok(Task::Multicrop),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

/// Per-sample metadata used for grouped reports.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Metadata {
    pub country: String,
    pub continent: String,
    pub year: i32,
    pub latitude: f64,
    pub longitude: f64,
    pub is_test: bool,
}

/// Column-oriented multi-view dataset: one contiguous `f32` block per view,
/// `sample_len` values per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: Task,
    schemas: Vec<ViewSchema>,
    views: Vec<Vec<f32>>,
    labels: Vec<usize>,
    metadata: Vec<Metadata>,
}

impl Dataset {
    pub fn new(
        task: Task,
        schemas: Vec<ViewSchema>,
        views: Vec<Vec<f32>>,
        labels: Vec<usize>,
        metadata: Vec<Metadata>,
    ) -> Result<Self> {
        let n = labels.len();
        if schemas.len() != views.len() {
            return Err(Error::Schema(format!("{} schemas for {} view blocks", schemas.len(), views.len())));
        }
        for (i, (s, v)) in schemas.iter().zip(&views).enumerate() {
            s.validate()?;
            if schemas[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::Schema(format!("view `{}` declared twice", s.name)));
            }
            if v.len() != n * s.sample_len() {
                return Err(Error::Schema(format!(
                    "view `{}` holds {} values, expected {} samples × {}",
                    s.name,
                    v.len(),
                    n,
                    s.sample_len()
                )));
            }
        }
        if metadata.len() != n {
            return Err(Error::Schema(format!("{} metadata rows for {n} samples", metadata.len())));
        }
        let k = task.classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Label(format!("label {bad} outside [0, {k})")));
        }
        if let Some(m) = metadata.iter().find(|m| !m.latitude.is_finite() || !m.longitude.is_finite()) {
            return Err(Error::Validation(format!("non-finite coordinates {:?}", (m.latitude, m.longitude))));
        }
        Ok(Self {
            task,
            schemas,
            views,
            labels,
            metadata,
        })
    }

    pub fn classes(&self) -> usize {
        self.task.classes()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn schemas(&self) -> &[ViewSchema] {
        &self.schemas
    }

    pub fn schema(&self, name: &str) -> Result<&ViewSchema> {
        self.schemas
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Schema(format!("dataset has no view `{name}`")))
    }

    pub fn view_names(&self) -> Vec<&str> {
        self.schemas.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn metadata(&self) -> &[Metadata] {
        &self.metadata
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.schemas
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::Schema(format!("dataset has no view `{name}`")))
    }

    /// Whole `f32` block of a view.
    pub fn view_data(&self, name: &str) -> Result<&[f32]> {
        Ok(&self.views[self.index_of(name)?])
    }

    /// Values of one sample in one view (`T·D`, time-major).
    pub fn sample(&self, name: &str, i: usize) -> Result<&[f32]> {
        let v = self.index_of(name)?;
        let len = self.schemas[v].sample_len();
        Ok(&self.views[v][i * len..(i + 1) * len])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes()];
        for &y in &self.labels {
            c[y] += 1;
        }
        c
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let views = self
            .schemas
            .iter()
            .zip(&self.views)
            .map(|(s, block)| {
                let len = s.sample_len();
                let mut out = Vec::with_capacity(indices.len() * len);
                for &i in indices {
                    out.extend_from_slice(&block[i * len..(i + 1) * len]);
                }
                out
            })
            .collect();
        Self {
            task: self.task,
            schemas: self.schemas.clone(),
            views,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            metadata: indices.iter().map(|&i| self.metadata[i].clone()).collect(),
        }
    }

    /// The dataset restricted to the named views, in that order.
    pub fn select_views(&self, names: &[&str]) -> Result<Self> {
        let mut schemas = Vec::new();
        let mut views = Vec::new();
        for n in names {
            let i = self.index_of(n)?;
            schemas.push(self.schemas[i].clone());
            views.push(self.views[i].clone());
        }
        Self::new(self.task, schemas, views, self.labels.clone(), self.metadata.clone())
    }

    /// Adds a view computed per sample by `f` (input: the source view's
    /// sample; output: the new view's sample).
    pub fn with_derived_view(
        &self,
        schema: ViewSchema,
        source: &str,
        f: impl Fn(&[f32]) -> Result<Vec<f32>>,
    ) -> Result<Self> {
        let mut block = Vec::with_capacity(self.len() * schema.sample_len());
        for i in 0..self.len() {
            let out = f(self.sample(source, i)?)?;
            if out.len() != schema.sample_len() {
                return Err(Error::Schema(format!(
                    "derived view `{}` produced {} values per sample",
                    schema.name,
                    out.len()
                )));
            }
            block.extend(out);
        }
        let mut schemas = self.schemas.clone();
        let mut views = self.views.clone();
        schemas.push(schema);
        views.push(block);
        Self::new(self.task, schemas, views, self.labels.clone(), self.metadata.clone())
    }

    /// Batch of the samples at `indices` in 64-bit precision.
    pub fn batch(&self, indices: &[usize]) -> Result<MultiViewBatch> {
        let b = indices.len();
        let views = self
            .schemas
            .iter()
            .zip(&self.views)
            .map(|(s, block)| {
                let len = s.sample_len();
                let mut data = Vec::with_capacity(b * len);
                for &i in indices {
                    data.extend(block[i * len..(i + 1) * len].iter().map(|&x| f64::from(x)));
                }
                Tensor::new(s.batch_shape(b), data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MultiViewBatch {
            schemas: self.schemas.clone(),
            views,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn full_batch(&self) -> Result<MultiViewBatch> {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Partition by the `is_test` metadata flag: `(train, test)`.
    pub fn split_by_flag(&self) -> (Self, Self) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.len()).partition(|&i| self.metadata[i].is_test);
        (self.subset(&train), self.subset(&test))
    }
}

/// Seeded stratified split: `(train, test)` index lists, each ascending.
///
/// The test size is `round(n·fraction)`, allotted to classes by largest
/// remainder; every class with at least two samples keeps one on each side.
pub fn split_indices(labels: &[usize], classes: usize, test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Label(format!("label {y} outside [0, {classes})")));
        }
        by_class[y].push(i);
    }
    let n = labels.len();
    let target = (n as f64 * test_fraction).round() as usize;
    let exact: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * test_fraction).collect();
    let mut quota: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut order: Vec<usize> = (0..classes).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut missing = target.saturating_sub(quota.iter().sum());
    for &c in order.iter().cycle().take(classes * 2) {
        if missing == 0 {
            break;
        }
        if quota[c] < by_class[c].len() {
            quota[c] += 1;
            missing -= 1;
        }
    }
    for c in 0..classes {
        let size = by_class[c].len();
        if size >= 2 {
            quota[c] = quota[c].clamp(1, size - 1);
        }
    }
    let mut r = rng::stream(seed, "split");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut r);
        test.extend_from_slice(&members[..quota[c]]);
        train.extend_from_slice(&members[quota[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Seeded stratified split of a dataset: `(train, test)`.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.labels(), dataset.classes(), test_fraction, seed)?;
    Ok((dataset.subset(&train), dataset.subset(&test)))
}
