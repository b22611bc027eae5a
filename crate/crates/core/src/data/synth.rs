use std::f64::consts::PI;

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Metadata, Task};
use crate::encoders::{ViewSchema, MONTHS};
use crate::rng::{self, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// Label = phase bit (optical) XOR amplitude bit (radar).
    Complementary,
    /// The label bit is encoded in every view.
    Redundant,
    /// The label is in the optical view; the radar view is pure noise.
    NoisyView,
}

impl std::str::FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "complementary" => Ok(SynthKind::Complementary),
            "redundant" => Ok(SynthKind::Redundant),
            "noisy-view" => Ok(SynthKind::NoisyView),
            _ => Err(Error::Config(format!("unknown synthetic spec `{s}`"))),
        }
    }
}

/// Synthetic binary dataset with an optical-like (12 × 11) and a
/// radar-like (12 × 2) view.
///
/// The radar amplitude bit lives in the first channel, the second holds a
/// flat backscatter level, so the bit also survives per-step normalisation
/// across channels (the sign of the channel difference flips only for the
/// large amplitude).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub train: usize,
    pub test: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub years: Vec<i32>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            kind: SynthKind::Complementary,
            train: 2000,
            test: 600,
            noise: 0.2,
            years: vec![2019, 2020, 2021],
        }
    }
}

const CONTINENTS: [(&str, &[&str]); 4] = [
    ("Africa", &["Kenya", "Togo", "Mali"]),
    ("Americas", &["Brazil", "Canada"]),
    ("Asia", &["India", "China"]),
    ("Europe", &["France", "Germany", "Spain"]),
];

fn signal(steps: usize, channels: usize, amplitude: f64, phase: f64, band_scale: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut out = vec![0.0; steps * channels];
    for t in 0..steps {
        let s = (2.0 * PI * t as f64 / steps as f64 + phase).sin();
        for c in 0..channels {
            out[t * channels + c] = amplitude * band_scale(c) * s;
        }
    }
    out
}

const RADAR_LEVEL: f64 = 0.8;

fn radar(amplitude: f64) -> Vec<f64> {
    let wave = signal(MONTHS, 1, amplitude, 0.0, |_| 1.0);
    wave.into_iter().flat_map(|v| [v, RADAR_LEVEL]).collect()
}

fn push_view(block: &mut Vec<f32>, clean: Vec<f64>, noise: &Normal<f64>, r: &mut Rng) {
    block.extend(clean.into_iter().map(|v| (v + noise.sample(r)) as f32));
}

/// Deterministic given `seed`. The first `train` samples are flagged as
/// training data, the remaining `test` as test data.
pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<Dataset> {
    if spec.train + spec.test == 0 {
        return Err(Error::Config("synthetic dataset needs at least one sample".into()));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Config(format!("noise level {} must be finite and >= 0", spec.noise)));
    }
    if spec.years.is_empty() {
        return Err(Error::Config("synthetic dataset needs at least one year".into()));
    }
    let optical = ViewSchema::optical();
    let radar_schema = ViewSchema::radar();
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut r = rng::stream(seed, "synth");
    let n = spec.train + spec.test;
    let (mut opt_block, mut rad_block) = (Vec::new(), Vec::new());
    let mut labels = Vec::with_capacity(n);
    let mut metadata = Vec::with_capacity(n);
    let opt_scale = |c: usize| 0.6 + 0.08 * c as f64;
    for i in 0..n {
        let b1 = r.random_bool(0.5);
        let b2 = r.random_bool(0.5);
        let jitter = r.random_range(0.85..1.15);
        let (label, opt, rad) = match spec.kind {
            SynthKind::Complementary => {
                let opt = signal(MONTHS, 11, jitter, if b1 { PI } else { 0.0 }, opt_scale);
                let rad = radar(if b2 { 1.5 } else { 0.5 });
                (usize::from(b1 ^ b2), opt, rad)
            }
            SynthKind::Redundant => {
                let opt = signal(MONTHS, 11, jitter, if b1 { PI } else { 0.0 }, opt_scale);
                let rad = radar(if b1 { 1.5 } else { 0.5 });
                (usize::from(b1), opt, rad)
            }
            SynthKind::NoisyView => {
                let opt = signal(MONTHS, 11, jitter, if b1 { PI } else { 0.0 }, opt_scale);
                (usize::from(b1), opt, vec![0.0; MONTHS * 2])
            }
        };
        push_view(&mut opt_block, opt, &noise, &mut r);
        push_view(&mut rad_block, rad, &noise, &mut r);
        if spec.kind == SynthKind::NoisyView {
            // Unit-variance noise so the uninformative view is not flat.
            let len = rad_block.len();
            for v in &mut rad_block[len - MONTHS * 2..] {
                *v = Normal::new(0.0, 1.0).expect("unit normal").sample(&mut r) as f32;
            }
        }
        let (continent, countries) = CONTINENTS[r.random_range(0..CONTINENTS.len())];
        let country = countries[r.random_range(0..countries.len())];
        metadata.push(Metadata {
            country: country.to_string(),
            continent: continent.to_string(),
            year: spec.years[r.random_range(0..spec.years.len())],
            latitude: (r.random_range(-40.0..60.0f64) * 1e4).round() / 1e4,
            longitude: (r.random_range(-120.0..140.0f64) * 1e4).round() / 1e4,
            is_test: i >= spec.train,
        });
        labels.push(label);
    }
    Dataset::new(Task::Binary, vec![optical, radar_schema], vec![opt_block, rad_block], labels, metadata)
}
