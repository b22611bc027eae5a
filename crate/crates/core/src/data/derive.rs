use crate::encoders::{ViewSchema, MONTHS};
use crate::{Error, Result};

/// Band positions of red (B4) and near-infrared (B8) in the optical view.
pub const RED_BAND: usize = 2;
pub const NIR_BAND: usize = 6;

/// `(NIR − RED) / (NIR + RED)` per time step of a `[T × D]` series;
/// a zero denominator gives 0.
pub fn compute_ndvi(series: &[f64], channels: usize, red: usize, nir: usize) -> Result<Vec<f64>> {
    if red >= channels || nir >= channels {
        return Err(Error::Validation(format!(
            "band index out of range: red {red}, nir {nir}, {channels} channels"
        )));
    }
    if channels == 0 || !series.len().is_multiple_of(channels) {
        return Err(Error::Dimension(format!("{} values do not form rows of {channels}", series.len())));
    }
    Ok(series
        .chunks_exact(channels)
        .map(|row| {
            let (r, n) = (row[red], row[nir]);
            let den = n + r;
            if den == 0.0 {
                0.0
            } else {
                (n - r) / den
            }
        })
        .collect())
}

/// NDVI of one `f32` optical sample.
pub fn ndvi_sample(optical: &[f32], channels: usize) -> Result<Vec<f32>> {
    let wide: Vec<f64> = optical.iter().map(|&x| f64::from(x)).collect();
    Ok(compute_ndvi(&wide, channels, RED_BAND, NIR_BAND)?
        .into_iter()
        .map(|v| v as f32)
        .collect())
}

pub fn ndvi_schema(optical: &ViewSchema) -> ViewSchema {
    ViewSchema::temporal("ndvi", optical.steps, 1)
}

/// Days per month slot of a 365-day season-year.
const MONTH_DAYS: f64 = 365.0 / MONTHS as f64;

/// Resamples irregular observations (`days` since the start of the
/// season-year, in `[0, 365)`; `values` row-major `[T_raw × D]`) to twelve
/// monthly rows: per-month mean, empty months linearly interpolated between
/// the nearest filled months and extended flat at the edges.
pub fn resample_monthly(days: &[f64], values: &[f64], channels: usize) -> Result<Vec<f64>> {
    if channels == 0 || values.len() != days.len() * channels {
        return Err(Error::Dimension(format!(
            "{} values for {} timestamps × {channels} channels",
            values.len(),
            days.len()
        )));
    }
    let mut sums = vec![0.0; MONTHS * channels];
    let mut counts = [0usize; MONTHS];
    for (i, &d) in days.iter().enumerate() {
        if !(0.0..365.0).contains(&d) {
            return Err(Error::Validation(format!("timestamp {d} outside the season-year")));
        }
        let m = ((d / MONTH_DAYS) as usize).min(MONTHS - 1);
        counts[m] += 1;
        for c in 0..channels {
            sums[m * channels + c] += values[i * channels + c];
        }
    }
    let filled: Vec<usize> = (0..MONTHS).filter(|&m| counts[m] > 0).collect();
    if filled.is_empty() {
        return Err(Error::EmptySeries("no observations in any month".into()));
    }
    let mut out = vec![0.0; MONTHS * channels];
    for &m in &filled {
        for c in 0..channels {
            out[m * channels + c] = sums[m * channels + c] / counts[m] as f64;
        }
    }
    for m in 0..MONTHS {
        if counts[m] > 0 {
            continue;
        }
        let prev = filled.iter().rev().find(|&&f| f < m).copied();
        let next = filled.iter().find(|&&f| f > m).copied();
        for c in 0..channels {
            out[m * channels + c] = match (prev, next) {
                (Some(a), Some(b)) => {
                    let w = (m - a) as f64 / (b - a) as f64;
                    out[a * channels + c] * (1.0 - w) + out[b * channels + c] * w
                }
                (Some(a), None) => out[a * channels + c],
                (None, Some(b)) => out[b * channels + c],
                (None, None) => unreachable!("at least one month is filled"),
            };
        }
    }
    Ok(out)
}
