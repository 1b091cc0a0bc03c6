//! Experiment configuration, orchestration over rounds, evaluation, and
//! metrics output.

mod config;
mod eval;
mod experiment;
mod metrics;

pub use config::{apply_override, DatasetConfig, ExperimentConfig, NetworkConfig, OUTPUT_DIR_ENV};
pub use eval::{argmax, evaluate, prototype_alignment, PrototypeAlignment};
pub use experiment::{run_experiment, Experiment};
pub use metrics::{
    metrics_row, DerivedSeeds, FinalSummary, MetricsWriter, RunRecord, METRICS_FILE, METRICS_HEADER, RUN_RECORD_FILE,
};
