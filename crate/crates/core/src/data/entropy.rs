use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use super::Dataset;
use crate::{Error, Result};

/// Normalised spectral entropy of a real series.
///
/// The mean is removed, the power `|X_k|²` is taken over the positive
/// frequency bins `k = 1..=T/2` and normalised to a distribution, and its
/// Shannon entropy is divided by `ln(T/2)`. A series with no power (constant)
/// has entropy 0.
pub fn spectral_entropy(series: &[f64]) -> Result<f64> {
    let t = series.len();
    if t < 4 {
        return Err(Error::Validation(format!("spectral entropy needs at least 4 points, got {t}")));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(t).process(&mut buf);
    let bins = t / 2;
    let power: Vec<f64> = buf[1..=bins].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = power.iter().sum();
    let scale = series.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    // Power below round-off of the input magnitude counts as none.
    if total <= (scale * 1e-12).powi(2) * t as f64 * t as f64 {
        return Ok(0.0);
    }
    let h: f64 = power
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| {
            let q = p / total;
            -q * q.ln()
        })
        .sum();
    Ok((h / (bins as f64).ln()).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureEntropy {
    pub view: String,
    pub feature: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

/// Per-view, per-feature spectral entropy over all samples of the temporal
/// views, with per-view means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyReport {
    pub features: Vec<FeatureEntropy>,
    pub view_means: Vec<(String, f64)>,
}

pub fn entropy_report(dataset: &Dataset) -> Result<EntropyReport> {
    let mut features = Vec::new();
    let mut view_means = Vec::new();
    for s in dataset.schemas().iter().filter(|s| s.temporal) {
        let mut all = 0.0;
        for f in 0..s.channels {
            let mut vals = Vec::with_capacity(dataset.len());
            for i in 0..dataset.len() {
                let x = dataset.sample(&s.name, i)?;
                let series: Vec<f64> = (0..s.steps).map(|t| f64::from(x[t * s.channels + f])).collect();
                vals.push(spectral_entropy(&series)?);
            }
            if vals.is_empty() {
                return Err(Error::Validation("entropy report of an empty dataset".into()));
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let std = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            vals.sort_by(f64::total_cmp);
            let median = if vals.len() % 2 == 1 {
                vals[vals.len() / 2]
            } else {
                (vals[vals.len() / 2 - 1] + vals[vals.len() / 2]) / 2.0
            };
            all += mean;
            features.push(FeatureEntropy {
                view: s.name.clone(),
                feature: f,
                mean,
                std,
                min: vals[0],
                median,
                max: vals[vals.len() - 1],
            });
        }
        view_means.push((s.name.clone(), all / s.channels as f64));
    }
    Ok(EntropyReport { features, view_means })
}

impl EntropyReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for f in &self.features {
            w.serialize(f)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
    }
}
