//! Training with mixup, patch aggregation, prediction and ensembling.

mod combine;
mod eval;
mod mixup;
mod prep;
pub mod synthetic;
mod train;

use std::path::PathBuf;

pub use combine::{aggregate_patches, ensemble, predict_label, SoftLabel, SIMPLEX_TOL};
pub use eval::{evaluate, evaluate_instances, predict_probs, report_for, write_predictions, Instance, PredictionRecord, EVAL_BATCH};
pub use mixup::{mixup_batch, mixup_with, Batch};
pub use prep::{
    cache_path, condition_recording, load_instances, load_training_set, prep_manifest, training_set_from_instances, Conditioning, PrepReport,
};
pub use train::{train, EpochStats, TrainConfig, TrainOutcome, Trainer, TrainingSet, BEST_CHECKPOINT, FINAL_CHECKPOINT, TRAIN_LOG};

use crate::dataset::DatasetError;
use crate::dsp::DspError;
use crate::metrics::MetricsError;
use crate::models::ModelError;
use crate::nn::NnError;
use crate::spectrogram::SpectrogramError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("batch of {0} examples is too small for mixup")]
    BatchTooSmall(usize),
    #[error("nothing to combine")]
    EmptyInput,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no instances in the requested split")]
    SplitEmpty,
    #[error("missing cached patches {0}; run prep first")]
    CacheMissing(PathBuf),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid probability vector {0}")]
    InvalidLabel(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Context { context: String, source: Box<PipelineError> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Spectrogram(#[from] SpectrogramError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    pub(crate) fn context(self, context: impl Into<String>) -> Self {
        PipelineError::Context { context: context.into(), source: Box::new(self) }
    }
}
