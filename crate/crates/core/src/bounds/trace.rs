use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::flatness::{flatness_estimate, flatness_t1pm, BatchObjective, Estimate};
use super::gradstats::batch_grad_stats;
use super::quad::{decay_integral, QuadratureSpec};
use super::trajectory::{clipped_subgaussian_increment, subgaussian_increment, subgaussian_trajectory, CompensatedSum};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::ndnet::MlpModel;
use crate::optim::{EpochSnapshot, Perturbation, StepRecord, TrainConfig, TrainingObserver};
use crate::rng::{streams, RngStream};

/// Which bound families the observer evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    SubGaussian,
    Bounded,
    Clipped,
}

#[derive(Debug, Clone)]
pub struct BoundOptions {
    /// Antithetic pairs per flatness estimate.
    pub pairs: usize,
    pub families: Vec<BoundFamily>,
    pub seed: u64,
    pub quad: QuadratureSpec,
}

impl Default for BoundOptions {
    fn default() -> Self {
        BoundOptions {
            pairs: 32,
            families: vec![BoundFamily::SubGaussian, BoundFamily::Bounded, BoundFamily::Clipped],
            seed: 0,
            quad: QuadratureSpec::default(),
        }
    }
}

/// One per-epoch evaluation. Bound fields are `None` when their family is not
/// evaluated (and, for the clipped bounds, when no clip threshold is set).
#[derive(Debug, Clone, PartialEq)]
pub struct BoundRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    /// `test_loss − train_loss`.
    pub gap: Option<f64>,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub flatness_t2pm: Estimate,
    pub flatness_t1pm: Estimate,
    /// `tr V̂` applied to the steps of this epoch.
    pub grad_var_trace: f64,
    /// Sub-Gaussian log increments accumulated since the previous record.
    pub traj_increment: f64,
    pub traj_subgaussian: f64,
    pub bound_subg_t2pm: Option<f64>,
    pub bound_subg_t1pm: Option<f64>,
    pub traj_bounded: Option<f64>,
    pub bound_bounded: Option<f64>,
    pub traj_clipped: Option<f64>,
    pub bound_clipped: Option<f64>,
    /// Bounded-loss clipped trajectory term.
    pub traj_clipped_bounded: Option<f64>,
    /// `√(|Σ_k|^{1/d})`, the σ in effect at this step.
    pub sigma_k: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundTrace {
    pub records: Vec<BoundRecord>,
}

/// Training observer that accumulates trajectory sums every step and evaluates
/// flatness and gradient-variance statistics once per epoch on a probe batch.
///
/// `tr V̂` is measured at `θ_0` and at every epoch end, and is held fixed over
/// the following epoch's steps.
pub struct BoundObserver {
    probe: Dataset,
    n_train: usize,
    options: BoundOptions,
    dims: Vec<usize>,
    grad_var_trace: f64,
    subg: CompensatedSum,
    subg_at_last_record: f64,
    bounded: CompensatedSum,
    clipped: CompensatedSum,
    clipped_bounded: CompensatedSum,
    decay_cache: HashMap<(u64, u64, u64), f64>,
    trace: BoundTrace,
}

impl BoundObserver {
    pub fn new(probe: Dataset, n_train: usize, options: BoundOptions) -> Result<Self> {
        if probe.len() < 2 {
            return Err(Error::InvalidArgument("probe batch needs at least 2 samples".into()));
        }
        if n_train == 0 {
            return Err(Error::InvalidArgument("training set size must be positive".into()));
        }
        if options.pairs < 2 {
            return Err(Error::InvalidArgument("flatness needs at least 2 antithetic pairs".into()));
        }
        Ok(BoundObserver {
            probe,
            n_train,
            options,
            dims: Vec::new(),
            grad_var_trace: 0.0,
            subg: CompensatedSum::default(),
            subg_at_last_record: 0.0,
            bounded: CompensatedSum::default(),
            clipped: CompensatedSum::default(),
            clipped_bounded: CompensatedSum::default(),
            decay_cache: HashMap::new(),
            trace: BoundTrace::default(),
        })
    }

    pub fn trace(&self) -> &BoundTrace {
        &self.trace
    }

    pub fn into_trace(self) -> BoundTrace {
        self.trace
    }

    fn enabled(&self, f: BoundFamily) -> bool {
        self.options.families.contains(&f)
    }

    fn measure_variance(&mut self, config: &TrainConfig, model: &MlpModel) -> Result<()> {
        let stats = batch_grad_stats(config.loss, model, self.probe.features(), self.probe.labels())?;
        self.grad_var_trace = stats.trace;
        Ok(())
    }

    /// `δ` (isotropic) or `ζ` (diagonal), memoized on its arguments, together
    /// with the variance it is divided by.
    fn decay_factor(&mut self, eta: f64, alpha: f64, noise: &Perturbation) -> Result<(f64, f64)> {
        let (coef, var) = match noise {
            Perturbation::Isotropic(s) => (1.0, s * s),
            Perturbation::Diagonal(_) => (noise.min_variance() / noise.max_variance(), noise.min_variance()),
        };
        let key = (eta.to_bits(), alpha.to_bits(), coef.to_bits());
        let quad = self.options.quad;
        let v = match self.decay_cache.get(&key) {
            Some(v) => *v,
            None => {
                let v = decay_integral(eta, alpha, coef, 1.0, quad)?;
                self.decay_cache.insert(key, v);
                v
            }
        };
        Ok((v, var))
    }
}

impl TrainingObserver for BoundObserver {
    fn on_start(&mut self, config: &TrainConfig, model: &MlpModel) -> Result<()> {
        if self.probe.dims() != model.input_dim() {
            return Err(Error::shape("probe features", model.input_dim(), self.probe.dims()));
        }
        self.dims = model.dims().to_vec();
        self.measure_variance(config, model)
    }

    fn on_step(&mut self, config: &TrainConfig, record: &StepRecord) -> Result<()> {
        let d = MlpModel::param_count(&self.dims);
        let noise = config.noise.at(record.step);
        let eta = record.learning_rate;
        let det_root = noise.det_root();
        self.subg
            .add(subgaussian_increment(eta, det_root, self.grad_var_trace, config.batch_size, d)?);
        let need_decay = self.enabled(BoundFamily::Bounded) || (self.enabled(BoundFamily::Clipped) && config.clip.is_some());
        if need_decay {
            let (factor, var) = self.decay_factor(eta, config.alpha, &noise)?;
            if self.enabled(BoundFamily::Bounded) {
                self.bounded.add(2.0 * factor * eta / var);
            }
            if let (true, Some(a)) = (self.enabled(BoundFamily::Clipped), config.clip) {
                self.clipped.add(clipped_subgaussian_increment(a, eta, &noise)?);
                let (b, n) = (config.batch_size as f64, self.n_train as f64);
                self.clipped_bounded.add(2.0 * factor * a * a * (b * b) * eta / (n * n * var));
            }
        }
        Ok(())
    }

    fn on_epoch(&mut self, config: &TrainConfig, snap: &EpochSnapshot<'_>) -> Result<()> {
        let k = snap.step;
        let d = snap.model.num_params();
        let theta = snap.model.flatten();
        let objective = BatchObjective {
            dims: &self.dims,
            features: self.probe.features(),
            labels: self.probe.labels(),
            kind: config.loss,
        };
        let noise = config.noise.at(k);
        // Every epoch reuses the same antithetic directions, rescaled by that
        // epoch's covariance: each estimate is still unbiased, and epoch-to-epoch
        // changes are not swamped by fresh Monte-Carlo noise.
        let t2 = flatness_estimate(
            &objective,
            &theta,
            &noise,
            self.options.pairs,
            &RngStream::new(self.options.seed, streams::FLATNESS_T2PM),
        )?;
        let t1 = flatness_t1pm(
            &objective,
            &theta,
            &config.noise,
            k,
            self.options.pairs,
            &RngStream::new(self.options.seed, streams::FLATNESS_T1PM),
        )?;

        let subg_sum = self.subg.value();
        let traj = subgaussian_trajectory(subg_sum, config.r, d, self.n_train);
        let sub_on = self.enabled(BoundFamily::SubGaussian);
        let traj_bounded = self
            .enabled(BoundFamily::Bounded)
            .then(|| config.c0 * config.c1 / self.n_train as f64 * self.bounded.value().sqrt());
        let clipped_on = self.enabled(BoundFamily::Clipped) && config.clip.is_some();
        let traj_clipped = clipped_on.then(|| subgaussian_trajectory(self.clipped.value(), config.r, d, self.n_train));
        let traj_clipped_bounded = clipped_on.then(|| 2.0 * config.c0 * self.clipped_bounded.value().sqrt());

        let record = BoundRecord {
            epoch: snap.epoch,
            step: k,
            train_loss: snap.train_loss,
            test_loss: snap.test_loss,
            gap: snap.test_loss.map(|t| t - snap.train_loss),
            train_accuracy: snap.train_accuracy,
            test_accuracy: snap.test_accuracy,
            flatness_t2pm: t2,
            flatness_t1pm: t1,
            grad_var_trace: self.grad_var_trace,
            traj_increment: subg_sum - self.subg_at_last_record,
            traj_subgaussian: traj,
            bound_subg_t2pm: sub_on.then(|| t2.value.abs() + traj),
            bound_subg_t1pm: sub_on.then(|| t1.value.abs() + traj),
            traj_bounded,
            bound_bounded: traj_bounded.map(|t| t2.value.abs() + t),
            traj_clipped,
            bound_clipped: traj_clipped.map(|t| t2.value.abs() + t),
            traj_clipped_bounded,
            sigma_k: noise.det_root().sqrt(),
        };
        self.subg_at_last_record = subg_sum;
        self.trace.records.push(record);
        self.measure_variance(config, snap.model)
    }
}
