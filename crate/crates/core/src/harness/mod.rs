//! Experiment configuration, supervised vs semi-supervised comparison runs,
//! reporting, and the command-line front end.

mod cli;
mod config;
mod run;
mod summary;

pub use cli::cli;
pub use config::ExperimentConfig;
pub use run::{
    load_splits, manifest, metrics_csv, run_cell, run_comparison, split_info, write_outputs, CellFailure, CellResult,
    ComparisonOutcome, ComparisonReport, ReportRow, SplitInfo, EPOCH_DEFINITION, REPORT_HEADER,
};
pub use summary::{summarize, ModeSummary, Summary, SUMMARY_HEADER};
