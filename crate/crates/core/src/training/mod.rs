//! Class-weighted cross-entropy, Adam, mini-batching, validation split,
//! early stopping and checkpoints.

mod adam;
mod checkpoint;
mod loss;
mod trainer;

pub use adam::Adam;
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use loss::{cross_entropy_value, weighted_cross_entropy, ClassWeights, LOG_CLAMP};
pub use trainer::{
    batches, predict, train, validation_split, EarlyStopping, EpochRecord, History, Observation, TrainConfig,
};
