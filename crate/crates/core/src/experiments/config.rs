use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ndvi_sample, ndvi_schema, split, synth_generate, Dataset, Metadata, SynthSpec, Task};
use crate::encoders::{Architecture, EncoderConfig};
use crate::fusion::{Component, FusionConfig, MergeKind, Strategy, DEFAULT_GAMMA};
use crate::metrics::{EntropyScale, GroupKey, MetricsReport};
use crate::training::TrainConfig;
use crate::{Error, Result};

/// `encoder = "gru"` fixes the architecture, `encoder = "search"` runs the
/// reduced protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum EncoderChoice {
    Fixed(Architecture),
    Search,
}

impl FromStr for EncoderChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("search") {
            return Ok(EncoderChoice::Search);
        }
        match s.parse()? {
            Architecture::Mlp => Err(Error::Config("`mlp` is reserved for static views".into())),
            a => Ok(EncoderChoice::Fixed(a)),
        }
    }
}

impl TryFrom<String> for EncoderChoice {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<EncoderChoice> for String {
    fn from(c: EncoderChoice) -> String {
        c.to_string()
    }
}

impl fmt::Display for EncoderChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EncoderChoice::Fixed(a) => f.write_str(a.name()),
            EncoderChoice::Search => f.write_str("search"),
        }
    }
}

/// Metric used to pick encoders (search winner, component cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    #[default]
    Kappa,
    Aa,
    F1Macro,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Kappa => "kappa",
            Selection::Aa => "aa",
            Selection::F1Macro => "f1_macro",
        }
    }

    pub fn of(self, report: &MetricsReport) -> Option<f64> {
        match self {
            Selection::Kappa => report.kappa,
            Selection::Aa => Some(report.aa),
            Selection::F1Macro => Some(report.f1_macro),
        }
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kappa" => Ok(Selection::Kappa),
            "aa" => Ok(Selection::Aa),
            "f1_macro" | "f1" => Ok(Selection::F1Macro),
            _ => Err(Error::Config(format!("unknown selection metric `{s}` (kappa, aa, f1_macro)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSource {
    #[serde(flatten)]
    pub spec: SynthSpec,
    pub seed: u64,
}

/// One experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// MVDS file, relative to the config file.
    pub dataset: Option<PathBuf>,
    /// Generated dataset (exclusive with `dataset`).
    pub synth: Option<SynthSource>,
    /// Checked against the dataset when given.
    pub task: Option<Task>,
    /// Empty = every view of the dataset. `ndvi` is derived from `optical`
    /// when the dataset lacks it.
    pub views: Vec<String>,
    pub encoder: EncoderChoice,
    pub strategy: Strategy,
    pub component: Component,
    pub merge: Option<MergeKind>,
    pub repetitions: usize,
    pub seed_base: u64,
    pub gamma: f64,
    pub head_dropout: f64,
    pub selection: Selection,
    /// Encoder of the component cells of the full grid; default: the best
    /// plain cell of the same strategy.
    pub component_encoder: Option<Architecture>,
    /// Also train one single-view model per view and encoder.
    pub baselines: bool,
    pub checkpoints: bool,
    pub group_by: Vec<GroupKey>,
    /// Used only when no sample carries the test flag.
    pub test_fraction: f64,
    pub entropy_scale: EntropyScale,
    pub train: TrainConfig,
    /// Widths and dropout of the encoders; the architecture is set per cell.
    pub encoder_settings: EncoderConfig,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            synth: None,
            task: None,
            views: Vec::new(),
            encoder: EncoderChoice::Fixed(Architecture::Gru),
            strategy: Strategy::Feature,
            component: Component::None,
            merge: None,
            repetitions: 20,
            seed_base: 0,
            gamma: DEFAULT_GAMMA,
            head_dropout: 0.2,
            selection: Selection::Kappa,
            component_encoder: None,
            baselines: false,
            checkpoints: true,
            group_by: vec![GroupKey::Class, GroupKey::Year, GroupKey::Continent],
            test_fraction: 0.3,
            entropy_scale: EntropyScale::default(),
            train: TrainConfig::default(),
            encoder_settings: EncoderConfig::default(),
            output: PathBuf::from("runs/latest"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    /// Reads `path`; a relative `dataset` is resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        if let Some(d) = &c.dataset {
            if d.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                c.dataset = Some(base.join(d));
            }
        }
        Ok(c)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset, &self.synth) {
            (None, None) => return Err(Error::Config("either `dataset` or `[synth]` is required".into())),
            (Some(_), Some(_)) => return Err(Error::Config("`dataset` and `[synth]` are exclusive".into())),
            _ => {}
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be >= 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test fraction {} outside (0, 1)", self.test_fraction)));
        }
        if self.component_encoder == Some(Architecture::Mlp) {
            return Err(Error::Config("`mlp` is reserved for static views".into()));
        }
        for (i, v) in self.views.iter().enumerate() {
            if self.views[..i].contains(v) {
                return Err(Error::Config(format!("view `{v}` listed twice")));
            }
        }
        self.train.validate()?;
        for arch in Architecture::TEMPORAL {
            EncoderConfig {
                architecture: arch,
                ..self.encoder_settings.clone()
            }
            .validate()?;
        }
        let arch = match self.encoder {
            EncoderChoice::Fixed(a) => a,
            EncoderChoice::Search => Architecture::Gru,
        };
        self.fusion(arch, self.strategy, self.component, 2).validate()
    }

    /// Fusion configuration of one cell.
    pub fn fusion(&self, arch: Architecture, strategy: Strategy, component: Component, classes: usize) -> FusionConfig {
        FusionConfig {
            strategy,
            component,
            encoder: EncoderConfig {
                architecture: arch,
                ..self.encoder_settings.clone()
            },
            merge: self.merge,
            gamma: self.gamma,
            classes,
            head_dropout: self.head_dropout,
        }
    }

    /// Loads (or generates) the dataset, derives requested views, checks
    /// the task and returns `(train, test)` restricted to the chosen views.
    pub fn prepare_data(&self) -> Result<(Dataset, Dataset)> {
        let data = match (&self.dataset, &self.synth) {
            (Some(path), _) => crate::data::load_dataset(path)?,
            (None, Some(s)) => synth_generate(&s.spec, s.seed)?,
            (None, None) => return Err(Error::Config("either `dataset` or `[synth]` is required".into())),
        };
        if let Some(task) = self.task {
            if task != data.task {
                return Err(Error::Validation(format!(
                    "config task {task:?} does not match the dataset ({:?})",
                    data.task
                )));
            }
        }
        let data = if self.views.iter().any(|v| v == "ndvi") && data.schema("ndvi").is_err() {
            let optical = data
                .schema("optical")
                .map_err(|_| Error::Validation("view `ndvi` needs an `optical` view to derive from".into()))?
                .clone();
            data.with_derived_view(ndvi_schema(&optical), "optical", |s| ndvi_sample(s, optical.channels))?
        } else {
            data
        };
        let data = if self.views.is_empty() {
            data
        } else {
            let names: Vec<&str> = self.views.iter().map(String::as_str).collect();
            data.select_views(&names)?
        };
        let (train, test) = if data.metadata().iter().any(|m| m.is_test) {
            data.split_by_flag()
        } else {
            split(&data, self.test_fraction, self.seed_base)?
        };
        if train.is_empty() || test.is_empty() {
            return Err(Error::Validation(format!(
                "split leaves {} training and {} test samples",
                train.len(),
                test.len()
            )));
        }
        check_grouping(test.metadata(), &self.group_by)?;
        Ok((train, test))
    }

    /// Identity of the data source for fingerprints.
    fn source(&self) -> serde_json::Value {
        match (&self.dataset, &self.synth) {
            (Some(p), _) => serde_json::json!({ "dataset": p.file_name().map(|f| f.to_string_lossy().into_owned()) }),
            (None, Some(s)) => serde_json::json!({ "synth": s }),
            (None, None) => serde_json::Value::Null,
        }
    }

    /// Stable hash of everything that determines the numbers of one cell
    /// (output location and parallelism excluded).
    pub fn fingerprint(&self, kind: &str, fusion: &FusionConfig, views: &[String]) -> String {
        let canonical = serde_json::json!({
            "kind": kind,
            "source": self.source(),
            "views": views,
            "fusion": fusion,
            "train": self.train,
            "repetitions": self.repetitions,
            "seed_base": self.seed_base,
            "test_fraction": self.test_fraction,
            "entropy_scale": self.entropy_scale,
        });
        // serde_json maps are ordered by key, so this text is canonical.
        let digest = Sha256::digest(canonical.to_string().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Every grouping key needs its metadata field on every sample.
pub fn check_grouping(metadata: &[Metadata], keys: &[GroupKey]) -> Result<()> {
    for &key in keys {
        let missing = metadata.iter().any(|m| match key {
            GroupKey::Class => false,
            GroupKey::Year => m.year == 0,
            GroupKey::Continent => m.continent.is_empty(),
            GroupKey::Country => m.country.is_empty(),
        });
        if missing {
            return Err(Error::MissingField(key.name().to_string()));
        }
    }
    Ok(())
}
