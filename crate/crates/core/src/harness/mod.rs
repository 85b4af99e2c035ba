//! Synthetic benchmark, training, explanation and evaluation runs.

pub mod dataset;
pub mod explain;
pub mod train;

pub use dataset::{
    generate_dataset, DatasetConfig, DatasetEntry, DatasetManifest, OodTransformSpec, Shift, Split,
    TransformKind,
};
pub use explain::{
    evaluate, explain_image, write_explain_outputs, EvalConfig, EvalReport, ExplainConfig,
    ExplainReport,
};
pub use train::{accuracy, train_model, Architecture, EpochLog, TrainConfig};
