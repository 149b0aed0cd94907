//! Manifests, orchestration, reporting and plots.

mod manifest;
mod phase;
mod plot;
mod runner;

pub use manifest::{Manifest, MetricSet, SequentialSpec, StringEntry, OUT_ENV};
pub use phase::{phase_detect, PhaseTolerances, Phases};
pub use plot::{read_summary_csv, trace_charts, Baseline, Chart, Series, SummaryRow};
pub use runner::{
    comparison_charts, open_learner, read_string_file, run_manifest, write_stamped, EpochValue, RunMetrics, RunOptions,
    RunReport, SequentialSummary, Stage, Stamped, StringRunSummary, FAILED_MARKER,
};
