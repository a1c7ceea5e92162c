//! Splitting, metrics, and the experiment drivers behind the command line.

mod experiments;
mod metrics;
mod split;

use thiserror::Error;

use crate::model::ModelError;
use crate::training::TrainingError;

pub use experiments::{
    git_revision, records_hash, run_ablation, run_limited_label_sweep, write_ablation_csv, write_json, write_sweep_csv,
    AblationInits, AblationRow, ExperimentConfig, RunManifest, SweepConfig, SweepRow,
};
pub use metrics::{
    evaluate, evaluate_model, metrics_from_predictions, predict, report_from_confusion, ClassMetrics, MacroMetrics,
    MetricsReport,
};
pub use split::{part_sizes, split_dataset, split_indices, SplitIndices, SplitSpec, Splits};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("class {class} has {count} records; at least 3 are needed")]
    ClassTooSmall { class: usize, count: usize },
    #[error("record {index} has no label")]
    Unlabeled { index: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("model has {model} classes but the data needs {data}")]
    ClassCountMismatch { model: usize, data: usize },
    #[error("{truth} labels but {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
