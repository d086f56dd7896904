//! Blocking, labeling, evaluation and end-to-end experiment runs.

mod experiment;
mod metrics;
mod pairs;
mod predictions;

pub use experiment::{
    all_negative_baseline, exact_match_baseline, run_experiment, write_run_dir, ExperimentConfig, ExperimentReport,
    ExperimentRun, FileSource, GraphSummary, KgVariant, Mode, SplitSummary, RUN_FILES,
};
pub use metrics::{evaluate, Metrics};
pub use pairs::{block_candidates, label_pairs, CandidatePair, LabeledPairs, DEFAULT_MAX_CROSS_PRODUCT};
pub use predictions::{
    evaluate_predictions, read_predictions, write_predictions, PredictionRow, PREDICTIONS_HEADER,
};
