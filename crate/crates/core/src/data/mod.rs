//! Dataset container, ingestion, derived views, spectral-entropy
//! diagnostics and the synthetic generator.

mod batch;
mod container;
mod dataset;
mod derive;
mod entropy;
mod import;
mod synth;

pub use batch::MultiViewBatch;
pub use container::{decode, encode, load_dataset, save_dataset, MAGIC, VERSION};
pub use dataset::{split, split_indices, Dataset, Metadata, Task};
pub use derive::{compute_ndvi, ndvi_sample, ndvi_schema, resample_monthly, NIR_BAND, RED_BAND};
pub use entropy::{entropy_report, spectral_entropy, EntropyReport, FeatureEntropy};
pub use import::{import_csv, ImportManifest, ImportReport, ViewFile};
pub use synth::{synth_generate, SynthKind, SynthSpec};

#[cfg(test)]
mod tests;
