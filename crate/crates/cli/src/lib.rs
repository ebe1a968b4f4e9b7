//! Config-driven experiment harness for `tdvr-core`.
//!
//! Every experiment fans its trials out over a worker pool, derives one
//! random stream per trial from the base seed, and writes a CSV table plus
//! a JSON summary to the output directory. Identical configurations give
//! byte-identical CSV files regardless of the worker count.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod stats;
pub mod trials;

pub use config::{ExperimentConfig, ExperimentKind, Overrides, ScheduleMode, TuningGrid};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, ExperimentReport};
pub use output::{CsvRow, Summary};
