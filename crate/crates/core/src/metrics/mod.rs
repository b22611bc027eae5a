//! Confusion-matrix scores, AUC, label-free uncertainty and per-group
//! breakdowns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Metadata;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// `K × K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if k < 2 || rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension(format!("confusion matrix must be K × K with K >= 2, got {k} rows")));
        }
        Ok(Self {
            classes: k,
            counts: rows.concat(),
        })
    }

    /// Binary matrix with class 1 as the positive class.
    pub fn binary(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self {
            classes: 2,
            counts: vec![tn, fp, fn_, tp],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }

    fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    /// One-vs-rest `(TP, FN, FP, TN)` of class `k`.
    pub fn one_vs_rest(&self, k: usize) -> (u64, u64, u64, u64) {
        let tp = self.get(k, k);
        let fn_ = self.row_sum(k) - tp;
        let fp = self.col_sum(k) - tp;
        (tp, fn_, fp, self.total() - tp - fn_ - fp)
    }

    fn check_nonempty(&self) -> Result<()> {
        if self.total() == 0 {
            return Err(Error::Undefined("metrics of an empty confusion matrix".into()));
        }
        Ok(())
    }
}

pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if classes < 2 {
        return Err(Error::Config(format!("{classes} classes; need at least 2")));
    }
    let mut counts = vec![0; classes * classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= classes || p >= classes {
            return Err(Error::Label(format!("label pair ({t}, {p}) outside [0, {classes})")));
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn argmax_rows(probs: &Tensor) -> Vec<usize> {
    let k = probs.shape()[probs.rank() - 1];
    probs
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean over classes of the one-vs-rest accuracy `(TP + TN) / N`.
pub fn average_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let n = cm.total() as f64;
    let sum: f64 = (0..cm.classes)
        .map(|k| {
            let (tp, _, _, tn) = cm.one_vs_rest(k);
            (tp + tn) as f64 / n
        })
        .sum();
    Ok(sum / cm.classes as f64)
}

/// Multi-class Cohen's kappa `(p_o − p_e) / (1 − p_e)`.
pub fn cohen_kappa(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let n = cm.total() as f64;
    let p_o = (0..cm.classes).map(|k| cm.get(k, k)).sum::<u64>() as f64 / n;
    let p_e = (0..cm.classes)
        .map(|k| cm.row_sum(k) as f64 * cm.col_sum(k) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Err(Error::Undefined("kappa is undefined when chance agreement is 1".into()));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Per-class precision, recall and F1 (0/0 counts as 0).
pub fn class_scores(cm: &ConfusionMatrix) -> Vec<ClassScores> {
    (0..cm.classes)
        .map(|k| {
            let (tp, fn_, fp, _) = cm.one_vs_rest(k);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScores { precision, recall, f1 }
        })
        .collect()
}

/// Unweighted mean of the per-class F1 scores.
pub fn f1_macro(cm: &ConfusionMatrix) -> Result<f64> {
    cm.check_nonempty()?;
    let s = class_scores(cm);
    Ok(s.iter().map(|c| c.f1).sum::<f64>() / s.len() as f64)
}

/// Mann–Whitney AUC of positive-class scores; tied pairs count one half.
pub fn auc_roc(scores: &[f64], y_true: &[usize]) -> Result<f64> {
    if scores.len() != y_true.len() {
        return Err(Error::Dimension(format!("{} scores but {} labels", scores.len(), y_true.len())));
    }
    if let Some(&y) = y_true.iter().find(|&&y| y > 1) {
        return Err(Error::Label(format!("AUC needs binary labels, got {y}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Average ranks over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&s| y_true[s] == 1).count() as f64;
        i = j + 1;
    }
    let pos = y_true.iter().filter(|&&y| y == 1).count() as f64;
    let neg = y_true.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Undefined("AUC needs both classes in the ground truth".into()));
    }
    Ok((rank_sum_pos - pos * (pos + 1.0) / 2.0) / (pos * neg))
}

/// Normaliser of the prediction entropy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyScale {
    /// Divide by `ln K` (range `[0, 1]` for every `K`).
    #[default]
    LogClasses,
    /// Divide by `ln 2` (bits).
    Bits,
    Nats,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub max_probability: f64,
    pub prediction_entropy: f64,
}

/// Batch means of the row maximum and of the row Shannon entropy.
pub fn uncertainty(probs: &Tensor, scale: EntropyScale) -> Result<Uncertainty> {
    if probs.rank() != 2 || probs.shape()[1] < 2 {
        return Err(Error::Dimension(format!("uncertainty of probabilities {:?}", probs.shape())));
    }
    let k = probs.shape()[1];
    let n = probs.shape()[0] as f64;
    let norm = match scale {
        EntropyScale::LogClasses => (k as f64).ln(),
        EntropyScale::Bits => 2f64.ln(),
        EntropyScale::Nats => 1.0,
    };
    let (mut max_sum, mut ent_sum) = (0.0, 0.0);
    for row in probs.data().chunks(k) {
        max_sum += row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        ent_sum -= row.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
    }
    Ok(Uncertainty {
        max_probability: max_sum / n,
        prediction_entropy: ent_sum / n / norm,
    })
}

/// Scores of one evaluated prediction set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub aa: f64,
    /// `None` when fewer than two true classes are present.
    pub kappa: Option<f64>,
    pub f1_macro: f64,
    pub per_class: Vec<ClassScores>,
    /// F1 of class 1 (binary tasks only).
    pub f1_positive: Option<f64>,
    /// Binary tasks with both classes present only.
    pub auc_roc: Option<f64>,
    pub max_probability: f64,
    pub prediction_entropy: f64,
    pub confusion: ConfusionMatrix,
    #[serde(default)]
    pub train_seconds: Option<f64>,
    #[serde(default)]
    pub predict_seconds: Option<f64>,
}

impl MetricsReport {
    pub fn compute(probs: &Tensor, labels: &[usize]) -> Result<Self> {
        Self::compute_scaled(probs, labels, EntropyScale::default())
    }

    pub fn compute_scaled(probs: &Tensor, labels: &[usize], scale: EntropyScale) -> Result<Self> {
        if probs.rank() != 2 || probs.shape()[0] != labels.len() {
            return Err(Error::Dimension(format!(
                "probabilities {:?} for {} labels",
                probs.shape(),
                labels.len()
            )));
        }
        let k = probs.shape()[1];
        let cm = confusion_matrix(labels, &argmax_rows(probs), k)?;
        let present = (0..k).filter(|&c| cm.row_sum(c) > 0).count();
        let kappa = if present >= 2 { cohen_kappa(&cm).ok() } else { None };
        let per_class = class_scores(&cm);
        let binary = k == 2;
        let auc_roc = if binary && present == 2 {
            let scores: Vec<f64> = probs.data().chunks(2).map(|r| r[1]).collect();
            Some(auc_roc(&scores, labels)?)
        } else {
            None
        };
        let u = uncertainty(probs, scale)?;
        Ok(Self {
            samples: labels.len(),
            aa: average_accuracy(&cm)?,
            kappa,
            f1_macro: f1_macro(&cm)?,
            f1_positive: binary.then(|| per_class[1].f1),
            per_class,
            auc_roc,
            max_probability: u.max_probability,
            prediction_entropy: u.prediction_entropy,
            confusion: cm,
            train_seconds: None,
            predict_seconds: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupKey {
    Class,
    Year,
    Continent,
    Country,
}

impl GroupKey {
    pub const ALL: [GroupKey; 4] = [GroupKey::Class, GroupKey::Year, GroupKey::Continent, GroupKey::Country];

    pub fn name(self) -> &'static str {
        match self {
            GroupKey::Class => "class",
            GroupKey::Year => "year",
            GroupKey::Continent => "continent",
            GroupKey::Country => "country",
        }
    }

    fn value(self, label: usize, meta: &Metadata) -> String {
        match self {
            GroupKey::Class => label.to_string(),
            GroupKey::Year => meta.year.to_string(),
            GroupKey::Continent => meta.continent.clone(),
            GroupKey::Country => meta.country.clone(),
        }
    }
}

impl std::str::FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GroupKey::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown grouping key `{s}` (class, year, continent, country)")))
    }
}

/// One report per distinct group value, in sorted key order.
pub fn grouped_report(
    probs: &Tensor,
    labels: &[usize],
    metadata: &[Metadata],
    key: GroupKey,
) -> Result<Vec<(String, MetricsReport)>> {
    if metadata.len() != labels.len() || probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::Dimension(format!(
            "{} labels, {} metadata rows, probabilities {:?}",
            labels.len(),
            metadata.len(),
            probs.shape()
        )));
    }
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (&y, m)) in labels.iter().zip(metadata).enumerate() {
        groups.entry(key.value(y, m)).or_default().push(i);
    }
    let k = probs.shape()[1];
    groups
        .into_iter()
        .map(|(name, idx)| {
            let rows: Vec<f64> = idx.iter().flat_map(|&i| probs.row(i).to_vec()).collect();
            let p = Tensor::new(vec![idx.len(), k], rows)?;
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            Ok((name, MetricsReport::compute(&p, &y)?))
        })
        .collect()
}
