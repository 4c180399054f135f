use std::fs;
use std::path::Path;

use serde::Serialize;

use super::config::{ExperimentConfig, Splits};
use crate::bounds::{BoundObserver, BoundRecord, BoundTrace};
use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::ndnet::MlpModel;
use crate::optim::{run_training, TrainConfig, TrainOutcome};
use crate::rng::{streams, RngStream};

/// Column order of `trace.csv`.
pub const TRACE_HEADER: [&str; 13] = [
    "epoch",
    "step",
    "train_loss",
    "test_loss",
    "gap",
    "flatness_t2pm",
    "flatness_t1pm",
    "traj_increment",
    "bound_subg_t2pm",
    "bound_subg_t1pm",
    "bound_bounded",
    "bound_clipped",
    "sigma_k",
];

/// Nine significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

pub fn trace_row(r: &BoundRecord) -> [String; 13] {
    [
        r.epoch.to_string(),
        r.step.to_string(),
        fmt_float(r.train_loss),
        fmt_opt(r.test_loss),
        fmt_opt(r.gap),
        fmt_float(r.flatness_t2pm.value),
        fmt_float(r.flatness_t1pm.value),
        fmt_float(r.traj_increment),
        fmt_opt(r.bound_subg_t2pm),
        fmt_opt(r.bound_subg_t1pm),
        fmt_opt(r.bound_bounded),
        fmt_opt(r.bound_clipped),
        fmt_float(r.sigma_k),
    ]
}

pub fn write_trace_csv(trace: &BoundTrace, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(TRACE_HEADER).map_err(|e| csv_error(path, e))?;
    for r in &trace.records {
        w.write_record(trace_row(r)).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    let context = path.display().to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(context, io),
        other => Error::InvalidArgument(format!("{context}: {other:?}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub num_params: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub n_probe: usize,
    pub steps: usize,
    pub epochs: usize,
    pub stopped_early: bool,
    pub final_train_loss: Option<f64>,
    pub final_test_loss: Option<f64>,
    pub final_train_accuracy: Option<f64>,
    pub final_test_accuracy: Option<f64>,
    pub final_flatness_t2pm: Option<f64>,
    pub final_flatness_t1pm: Option<f64>,
    pub final_traj_subgaussian: Option<f64>,
    pub final_bound_subg_t2pm: Option<f64>,
    pub final_bound_subg_t1pm: Option<f64>,
    pub final_bound_bounded: Option<f64>,
    pub final_bound_clipped: Option<f64>,
    pub final_traj_clipped_bounded: Option<f64>,
}

/// Everything a training run produces, before anything is written.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub config: TrainConfig,
    pub outcome: TrainOutcome,
    pub trace: BoundTrace,
    pub summary: RunSummary,
}

/// Trains with a bound observer attached, entirely in memory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    cfg.validate()?;
    let splits = cfg.load_splits()?;
    run_on_splits(cfg, &splits)
}

pub fn run_on_splits(cfg: &ExperimentConfig, splits: &Splits) -> Result<ExperimentRun> {
    let Splits { train, test, probe } = splits;
    let classes = train.num_classes().max(test.num_classes());
    let dims = cfg.layer_dims(train.dims(), classes);
    let model = MlpModel::init(&dims, &mut RngStream::new(cfg.seed, streams::INIT))?;
    let spe = BatchSampler::new(cfg.seed, cfg.train.batch_size, cfg.train.sampling).steps_per_epoch(train.len());
    let config = cfg.train_config(train.len(), spe)?;
    let mut observer = BoundObserver::new(probe.clone(), train.len(), cfg.bound_options())?;
    let outcome = run_training(&config, model, train, Some(test), &mut [&mut observer])?;
    let trace = observer.into_trace();
    let last = trace.records.last();
    let summary = RunSummary {
        num_params: MlpModel::param_count(&dims),
        n_train: train.len(),
        n_test: test.len(),
        n_probe: probe.len(),
        steps: outcome.steps.len(),
        epochs: outcome.epochs.len(),
        stopped_early: outcome.stopped_early,
        final_train_loss: last.map(|r| r.train_loss),
        final_test_loss: last.and_then(|r| r.test_loss),
        final_train_accuracy: last.map(|r| r.train_accuracy),
        final_test_accuracy: last.and_then(|r| r.test_accuracy),
        final_flatness_t2pm: last.map(|r| r.flatness_t2pm.value),
        final_flatness_t1pm: last.map(|r| r.flatness_t1pm.value),
        final_traj_subgaussian: last.map(|r| r.traj_subgaussian),
        final_bound_subg_t2pm: last.and_then(|r| r.bound_subg_t2pm),
        final_bound_subg_t1pm: last.and_then(|r| r.bound_subg_t1pm),
        final_bound_bounded: last.and_then(|r| r.bound_bounded),
        final_bound_clipped: last.and_then(|r| r.bound_clipped),
        final_traj_clipped_bounded: last.and_then(|r| r.traj_clipped_bounded),
    };
    Ok(ExperimentRun {
        config,
        outcome,
        trace,
        summary,
    })
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Runs the experiment and writes `trace.csv` and `summary.json` into `cfg.out`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let run = run_experiment(cfg)?;
    ensure_dir(&cfg.out)?;
    write_trace_csv(&run.trace, &cfg.out.join("trace.csv"))?;
    write_json(&run.summary, &cfg.out.join("summary.json"))?;
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_has_nine_significant_digits() {
        assert_eq!(fmt_float(0.1), "1.00000000e-1");
        assert_eq!(fmt_float(-12345.678901), "-1.23456789e4");
        assert_eq!(fmt_opt(None), "");
    }
}
