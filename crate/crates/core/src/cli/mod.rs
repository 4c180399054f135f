//! Experiment orchestration behind the `genbound` binary: JSON configuration,
//! training runs with bound tracing, sweeps, the property suite, and SVG
//! rendering of traces.

pub mod check;
pub mod config;
pub mod render;
pub mod sweep;
pub mod train;

pub use check::{cmd_check, CheckReport, Fault, PropertyResult};
pub use config::{DatasetConfig, ExperimentConfig, NoiseConfig, Splits};
pub use render::{cmd_render, read_series, render_svg};
pub use sweep::{cmd_sweep, SweepAxis, SweepResult, SweepRow};
pub use train::{cmd_train, run_experiment, run_on_splits, write_trace_csv, ExperimentRun, RunSummary, TRACE_HEADER};
