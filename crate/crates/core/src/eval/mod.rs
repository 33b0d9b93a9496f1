//! Chronological splits, experiment cells, LVK-size sweeps, reports and a
//! synthetic lead-lag market for verifiable experiments.

mod experiment;
mod report;
mod split;
mod synthetic;

use thiserror::Error;

pub use experiment::{
    cell_config_hash, lvk_sweep, naive_repeat, run_experiment, ExperimentResult, ExperimentSettings, Method, SweepRow, WindowPrediction,
};
pub use report::{
    aggregate, import_external, mse_report, read_result, write_result, write_sweep, AggregateRow, ReportFiles,
};
pub use split::{split_windows, SplitRatio};
pub use synthetic::{draw_lags, generate_synthetic, SyntheticMarketSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("need at least 2 windows to split, got {0}")]
    TooFewWindows(usize),
    #[error("unknown split ratio {0:?} (expected 7:3, 8:2 or 9:1)")]
    UnknownSplit(String),
    #[error("invalid synthetic market: {0}")]
    InvalidSynthetic(String),
    #[error("external predictions: {0}")]
    External(String),
    #[error("nothing to report")]
    EmptyReport,
}
