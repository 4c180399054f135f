use std::str::FromStr;

use serde::Serialize;

use super::config::{ExperimentConfig, NoiseConfig, NoiseScaling};
use super::train::{csv_error, ensure_dir, fmt_float, run_on_splits, write_json, write_trace_csv};
use crate::bounds::{rate_sweep, QuadratureSpec, RateSweep};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Analytic sample-size sweep of the bound model.
    N,
    /// Hidden-layer width; every hidden layer takes the value.
    Width,
    /// Noise exponent `γ` in `σ = c·n^{−γ}`.
    Gamma,
}

impl FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "n" => Ok(SweepAxis::N),
            "width" => Ok(SweepAxis::Width),
            "gamma" => Ok(SweepAxis::Gamma),
            other => Err(Error::Config(format!("unknown sweep axis {other:?}; expected n, width or gamma"))),
        }
    }
}

pub const TRAINED_SWEEP_HEADER: [&str; 13] = [
    "value",
    "epochs",
    "train_loss",
    "test_loss",
    "gap",
    "test_accuracy",
    "flatness_t2pm",
    "flatness_t1pm",
    "traj_subgaussian",
    "bound_subg_t2pm",
    "bound_subg_t1pm",
    "bound_bounded",
    "bound_clipped",
];

pub const RATE_SWEEP_HEADER: [&str; 5] = ["n", "sigma", "flatness", "trajectory", "bound"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub epochs: usize,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub gap: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub flatness_t2pm: Option<f64>,
    pub flatness_t1pm: Option<f64>,
    pub traj_subgaussian: Option<f64>,
    pub bound_subg_t2pm: Option<f64>,
    pub bound_subg_t1pm: Option<f64>,
    pub bound_bounded: Option<f64>,
    pub bound_clipped: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum SweepResult {
    Trained(Vec<SweepRow>),
    Rate(RateSweep),
}

#[derive(Serialize)]
struct RateSummary {
    gamma: f64,
    slope: f64,
    top_decade_slope: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// Runs one experiment per axis value (or the analytic rate sweep for `n`) and
/// writes `sweep.csv` into `cfg.out`; trained runs also get `<axis>_<value>/trace.csv`.
pub fn cmd_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepResult> {
    if values.len() < 2 {
        return Err(Error::Config(format!("sweep needs at least 2 axis values, got {}", values.len())));
    }
    cfg.validate()?;
    ensure_dir(&cfg.out)?;
    let path = cfg.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;

    if axis == SweepAxis::N {
        let ns = values
            .iter()
            .map(|&v| {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(Error::Config(format!("sample sizes must be positive integers, got {v}")))
                }
            })
            .collect::<Result<Vec<usize>>>()?;
        let model = cfg.rate_model.model();
        let quad = QuadratureSpec {
            abs_tol: cfg.bounds.quad_tol,
            ..QuadratureSpec::default()
        };
        let sweep = rate_sweep(&ns, &model, quad)?;
        w.write_record(RATE_SWEEP_HEADER).map_err(|e| csv_error(&path, e))?;
        for p in &sweep.points {
            w.write_record([
                p.n.to_string(),
                fmt_float(p.sigma),
                fmt_float(p.flatness),
                fmt_float(p.trajectory),
                fmt_float(p.bound),
            ])
            .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
        write_json(
            &RateSummary {
                gamma: model.gamma,
                slope: sweep.slope,
                top_decade_slope: sweep.top_decade_slope,
            },
            &cfg.out.join("sweep_summary.json"),
        )?;
        return Ok(SweepResult::Rate(sweep));
    }

    let splits = cfg.load_splits()?;
    w.write_record(TRAINED_SWEEP_HEADER).map_err(|e| csv_error(&path, e))?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut run_cfg = cfg.clone();
        let tag = match axis {
            SweepAxis::Width => {
                if !(v >= 1.0 && v.fract() == 0.0) {
                    return Err(Error::Config(format!("widths must be positive integers, got {v}")));
                }
                run_cfg.model.hidden = vec![v as usize; cfg.model.hidden.len().max(1)];
                format!("width_{}", v as usize)
            }
            SweepAxis::Gamma => {
                let c = cfg.noise.scaling.map_or(1.0, |s| s.c);
                run_cfg.noise = NoiseConfig {
                    scaling: Some(NoiseScaling { c, gamma: v }),
                    ..NoiseConfig::default()
                };
                format!("gamma_{v}")
            }
            SweepAxis::N => unreachable!(),
        };
        run_cfg.out = cfg.out.join(&tag);
        let run = run_on_splits(&run_cfg, &splits)?;
        ensure_dir(&run_cfg.out)?;
        write_trace_csv(&run.trace, &run_cfg.out.join("trace.csv"))?;
        let last = run.trace.records.last();
        let row = SweepRow {
            value: v,
            epochs: run.summary.epochs,
            train_loss: last.map(|r| r.train_loss),
            test_loss: last.and_then(|r| r.test_loss),
            gap: last.and_then(|r| r.gap),
            test_accuracy: last.and_then(|r| r.test_accuracy),
            flatness_t2pm: last.map(|r| r.flatness_t2pm.value),
            flatness_t1pm: last.map(|r| r.flatness_t1pm.value),
            traj_subgaussian: last.map(|r| r.traj_subgaussian),
            bound_subg_t2pm: last.and_then(|r| r.bound_subg_t2pm),
            bound_subg_t1pm: last.and_then(|r| r.bound_subg_t1pm),
            bound_bounded: last.and_then(|r| r.bound_bounded),
            bound_clipped: last.and_then(|r| r.bound_clipped),
        };
        w.write_record([
            fmt_float(row.value),
            row.epochs.to_string(),
            opt(row.train_loss),
            opt(row.test_loss),
            opt(row.gap),
            opt(row.test_accuracy),
            opt(row.flatness_t2pm),
            opt(row.flatness_t1pm),
            opt(row.traj_subgaussian),
            opt(row.bound_subg_t2pm),
            opt(row.bound_subg_t1pm),
            opt(row.bound_bounded),
            opt(row.bound_clipped),
        ])
        .map_err(|e| csv_error(&path, e))?;
        rows.push(row);
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(SweepResult::Trained(rows))
}
