use crate::tensor::{Tape, Tensor, Var};
use crate::{Error, Result};

/// Probability floor inside the logarithm.
pub const LOG_CLAMP: f64 = 1e-12;

/// Per-class loss weights, inversely proportional to class frequency and
/// normalised to sum to `K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    weights: Vec<f64>,
    pub counts: Vec<usize>,
}

impl ClassWeights {
    pub fn from_labels(labels: &[usize], classes: usize) -> Result<Self> {
        let mut counts = vec![0usize; classes];
        for &y in labels {
            if y >= classes {
                return Err(Error::Label(format!("label {y} outside [0, {classes})")));
            }
            counts[y] += 1;
        }
        Self::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<usize>) -> Result<Self> {
        if let Some(k) = counts.iter().position(|&c| c == 0) {
            return Err(Error::DegenerateClass(k));
        }
        let total: usize = counts.iter().sum();
        let inv: Vec<f64> = counts.iter().map(|&c| total as f64 / c as f64).collect();
        let norm: f64 = inv.iter().sum();
        let k = counts.len() as f64;
        Ok(Self {
            weights: inv.iter().map(|w| k * w / norm).collect(),
            counts,
        })
    }

    pub fn uniform(classes: usize) -> Self {
        Self {
            weights: vec![1.0; classes],
            counts: Vec::new(),
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn classes(&self) -> usize {
        self.weights.len()
    }
}

fn check_labels(labels: &[usize], rows: usize, classes: usize) -> Result<()> {
    if labels.len() != rows {
        return Err(Error::Dimension(format!("{} labels for {rows} prediction rows", labels.len())));
    }
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(Error::Label(format!("label {y} outside [0, {classes})"))),
        None => Ok(()),
    }
}

/// Mean over the batch of `w_{y_i} · (−log ŷ_{i, y_i})`, on the tape.
pub fn weighted_cross_entropy(tape: &mut Tape, probs: Var, labels: &[usize], weights: &ClassWeights) -> Result<Var> {
    let shape = tape.shape(probs).to_vec();
    let [rows, k] = shape[..] else {
        return Err(Error::Dimension(format!("probabilities must be [B, K], got {shape:?}")));
    };
    if k != weights.classes() {
        return Err(Error::Dimension(format!("{k} probability columns for {} class weights", weights.classes())));
    }
    check_labels(labels, rows, k)?;
    let mut mask = vec![0.0; rows * k];
    for (i, &y) in labels.iter().enumerate() {
        mask[i * k + y] = -weights.as_slice()[y] / rows as f64;
    }
    let logp = tape.log_clamp(probs, LOG_CLAMP)?;
    let m = tape.constant(Tensor::new(vec![rows, k], mask)?);
    let picked = tape.mul(logp, m)?;
    tape.sum_all(picked)
}

/// Detached [`weighted_cross_entropy`].
pub fn cross_entropy_value(probs: &Tensor, labels: &[usize], weights: &ClassWeights) -> Result<f64> {
    let mut tape = Tape::new();
    let p = tape.constant(probs.clone());
    let l = weighted_cross_entropy(&mut tape, p, labels, weights)?;
    Ok(tape.value(l).data()[0])
}
