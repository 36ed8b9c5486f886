//! Data ingestion, Adam, the joint training loop and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod data;
mod metrics;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use config::{AdamConfig, TrainConfig};
pub use data::{load_style, ContentSet};
pub use metrics::{MetricsLog, StepRecord, METRICS_HEADER};
pub use trainer::{gradients, initial_checkpoint, sample_alpha, train, RunSinks, Trainer};
