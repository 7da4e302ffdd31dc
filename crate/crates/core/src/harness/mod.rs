//! Cold-start experiment loop, learning-curve metrics and report files.

mod config;
mod metrics;
mod report;
mod run;

pub use config::{DatasetSource, ExperimentConfig, DEFAULT_SEEDS};
pub use metrics::{aggregate_seeds, compute_aulc, labels_to_accuracy, SeedAggregate, AULC_DEFINITION};
pub use report::{
    aggregate_csv, read_aggregate, read_manifest, seed_csv, seed_csv_name, write_report, Manifest, SeedSummary,
    AGGREGATE_CSV_HEADER, AGGREGATE_FILE, MANIFEST_FILE, SEED_CSV_HEADER,
};
pub use run::{load_dataset, run_experiment, run_on_dataset, RoundRecord, RunResult, SeedRun};
