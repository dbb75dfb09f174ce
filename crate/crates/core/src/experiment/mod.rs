//! Protocol harness: repeated λ-sweeps over the robust ranker and the
//! baselines, confidence intervals and fairest-point tables.

mod config;
mod report;
mod sweep;

pub use config::{ExperimentConfig, Method};
pub use report::{
    aggregate_ci, fairest_point, format_fairest, read_summary, summarize, write_summary, Estimate,
    FairestPoint, SummaryRow, DP_THRESHOLD,
};
pub use sweep::{
    run_sweep, run_sweep_on, write_outputs, CellDiagnostics, CellFailure, ExperimentResult, ResultRow,
};
