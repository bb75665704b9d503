//! Overhead measurement and the experiment suite.

mod calibration;
mod catalog;
mod chart;
mod overhead;
mod suite;

use thiserror::Error;

pub use calibration::CalibrationProfile;
pub use catalog::{register_for, resolve_function};
pub use chart::{line_chart, Series};
pub use overhead::{ideal_time, overhead};
pub use suite::{
    bench_large_payload, bench_parallel, bench_sequence, bench_state, run_suite, ExecMode,
    OverheadSample, Scenario, SuiteConfig, SuiteReport,
};

use crate::engines::EngineError;
use crate::runtime::RuntimeError;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
