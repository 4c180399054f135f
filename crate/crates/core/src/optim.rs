//! SGD and clipped SGD, perturbation schedules, surrogate-iterate bookkeeping,
//! and the training loop that drives bound observers.

use std::ops::{Deref, DerefMut};

use crate::data::{BatchSampler, Dataset, SamplingMode};
use crate::error::{Error, Result};
use crate::ndnet::{accuracy, loss_and_grad, loss_eval, LossKind, MlpModel};
use crate::rng::{streams, RngStream};

/// Flattened model parameters in canonical layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(d: usize) -> Self {
        ParamVector(vec![0.0; d])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_len(&self, other: &[f64], context: &'static str) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::shape(context, self.len(), other.len()));
        }
        Ok(())
    }

    pub fn add(&self, other: &[f64]) -> Result<ParamVector> {
        self.check_len(other, "ParamVector::add")?;
        Ok(ParamVector(self.0.iter().zip(other).map(|(a, b)| a + b).collect()))
    }

    pub fn add_assign(&mut self, other: &[f64]) -> Result<()> {
        self.check_len(other, "ParamVector::add_assign")?;
        self.0.iter_mut().zip(other).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// `θ − η·g`.
pub fn sgd_step(theta: &ParamVector, grad: &[f64], eta: f64) -> Result<ParamVector> {
    theta.check_len(grad, "sgd_step")?;
    Ok(ParamVector(theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect()))
}

/// `min(1, A/‖g‖₂)·g`. A zero gradient is returned unchanged.
pub fn clip_gradient(grad: &[f64], threshold: f64) -> Result<ParamVector> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {threshold}")));
    }
    let norm = grad.iter().map(|v| v * v).sum::<f64>().sqrt();
    // a clipped vector's norm can land a few ulps above A; treat it as clipped
    // so that clipping is idempotent
    if norm <= threshold * (1.0 + 4.0 * f64::EPSILON) {
        return Ok(ParamVector(grad.to_vec()));
    }
    let scale = threshold / norm;
    Ok(ParamVector(grad.iter().map(|v| v * scale).collect()))
}

/// Covariance of one Gaussian perturbation `ε ~ N(0, Σ)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// `Σ = σ² I`.
    Isotropic(f64),
    /// `Σ = diag(v)`, variances per coordinate.
    Diagonal(Vec<f64>),
}

impl Perturbation {
    /// `|Σ|^{1/d}`: σ² for isotropic noise, the geometric mean of the variances otherwise.
    pub fn det_root(&self) -> f64 {
        match self {
            Perturbation::Isotropic(s) => s * s,
            Perturbation::Diagonal(v) => (v.iter().map(|x| x.ln()).sum::<f64>() / v.len() as f64).exp(),
        }
    }

    pub fn min_variance(&self) -> f64 {
        match self {
            Perturbation::Isotropic(s) => s * s,
            Perturbation::Diagonal(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn max_variance(&self) -> f64 {
        match self {
            Perturbation::Isotropic(s) => s * s,
            Perturbation::Diagonal(v) => v.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Writes one draw into `out` using the stream's next `out.len()` normals.
    pub fn sample_into(&self, rng: &mut RngStream, out: &mut [f64]) -> Result<()> {
        match self {
            Perturbation::Isotropic(s) => rng.fill_normal(out, *s),
            Perturbation::Diagonal(v) => {
                if v.len() != out.len() {
                    return Err(Error::shape("diagonal perturbation", v.len(), out.len()));
                }
                for (o, var) in out.iter_mut().zip(v) {
                    *o = var.sqrt() * rng.normal();
                }
            }
        }
        Ok(())
    }
}

/// Per-step perturbation law. Step `k` (1-based) reads entry `k − 1`; the last
/// entry repeats for later steps.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseSchedule {
    Isotropic(Vec<f64>),
    Diagonal(Vec<Vec<f64>>),
}

impl NoiseSchedule {
    pub fn constant(sigma: f64) -> Self {
        NoiseSchedule::Isotropic(vec![sigma])
    }

    /// `σ = c·n^{-γ}` for every step.
    pub fn scaled(c: f64, gamma: f64, n: usize) -> Self {
        NoiseSchedule::constant(c * (n as f64).powf(-gamma))
    }

    pub fn diagonal(variances: Vec<f64>) -> Self {
        NoiseSchedule::Diagonal(vec![variances])
    }

    pub fn validate(&self, d: Option<usize>) -> Result<()> {
        match self {
            NoiseSchedule::Isotropic(s) => {
                if s.is_empty() || s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidArgument("every σ_k must be positive and finite".into()));
                }
            }
            NoiseSchedule::Diagonal(steps) => {
                if steps.is_empty() {
                    return Err(Error::InvalidArgument("empty diagonal noise schedule".into()));
                }
                for v in steps {
                    if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                        return Err(Error::InvalidArgument("diagonal noise variances must be positive".into()));
                    }
                    if let Some(d) = d {
                        if v.len() != d {
                            return Err(Error::shape("diagonal noise schedule", d, v.len()));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn index(len: usize, k: usize) -> usize {
        k.saturating_sub(1).min(len - 1)
    }

    /// Law of `ε_k`.
    pub fn at(&self, k: usize) -> Perturbation {
        match self {
            NoiseSchedule::Isotropic(s) => Perturbation::Isotropic(s[Self::index(s.len(), k)]),
            NoiseSchedule::Diagonal(v) => Perturbation::Diagonal(v[Self::index(v.len(), k)].clone()),
        }
    }

    /// Law of `Σ_{t≤k} ε_t`: independent Gaussians, so variances add.
    pub fn accumulated(&self, k: usize) -> Perturbation {
        match self {
            NoiseSchedule::Isotropic(s) => {
                let var: f64 = (1..=k).map(|t| s[Self::index(s.len(), t)].powi(2)).sum();
                Perturbation::Isotropic(var.sqrt())
            }
            NoiseSchedule::Diagonal(v) => {
                let mut acc = vec![0.0; v[0].len()];
                for t in 1..=k {
                    for (a, x) in acc.iter_mut().zip(&v[Self::index(v.len(), t)]) {
                        *a += x;
                    }
                }
                Perturbation::Diagonal(acc)
            }
        }
    }
}

/// `ε_k`, a pure function of `(rng seed, rng stream, k)`.
pub fn sample_noise(schedule: &NoiseSchedule, k: usize, d: usize, rng: &RngStream) -> Result<ParamVector> {
    let mut out = vec![0.0; d];
    schedule.at(k).sample_into(&mut rng.substream(k as u64), &mut out)?;
    Ok(ParamVector(out))
}

/// Noise bookkeeping for the two surrogate iterates. Never touches the real
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateState {
    cumulative: ParamVector,
    last: ParamVector,
    step: usize,
}

impl SurrogateState {
    pub fn new(d: usize) -> Self {
        SurrogateState {
            cumulative: ParamVector::zeros(d),
            last: ParamVector::zeros(d),
            step: 0,
        }
    }

    pub fn advance(&mut self, eps: ParamVector) -> Result<()> {
        self.cumulative.add_assign(&eps)?;
        self.last = eps;
        self.step += 1;
        Ok(())
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn cumulative_noise(&self) -> &ParamVector {
        &self.cumulative
    }

    pub fn last_noise(&self) -> &ParamVector {
        &self.last
    }
}

/// Cumulative-noise surrogate `θ_k + Σ_{t≤k} ε_t`.
pub fn t1pm_virtual(theta: &ParamVector, state: &SurrogateState) -> Result<ParamVector> {
    theta.add(&state.cumulative)
}

/// Fresh-noise surrogate `θ_k + ε_k`.
pub fn t2pm_virtual(theta: &ParamVector, eps: &[f64]) -> Result<ParamVector> {
    theta.add(eps)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LearningRate {
    Constant(f64),
    /// Step `k` reads entry `k − 1`; the last entry repeats.
    PerStep(Vec<f64>),
}

impl LearningRate {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            LearningRate::Constant(e) => *e,
            LearningRate::PerStep(v) => v[k.saturating_sub(1).min(v.len() - 1)],
        }
    }
}

/// Everything the training loop and the bound observers need.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: LearningRate,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Clip threshold `A`; plain SGD when absent.
    pub clip: Option<f64>,
    pub sampling: SamplingMode,
    pub loss: LossKind,
    pub noise: NoiseSchedule,
    /// Sub-Gaussian constant.
    pub r: f64,
    /// Loss bound for the bounded-loss bounds.
    pub c0: f64,
    /// Gradient-deviation bound for the bounded-loss bounds.
    pub c1: f64,
    pub alpha: f64,
    /// Seed for initialization-independent training randomness (batch order).
    pub seed: u64,
    /// Seed for the analysis-only surrogate noise.
    pub noise_seed: u64,
    /// Early-stopping patience in epochs; disabled when absent.
    pub patience: Option<usize>,
    pub early_stop_tol: f64,
    pub track_surrogates: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: LearningRate::Constant(0.01),
            batch_size: 64,
            max_steps: 0,
            clip: None,
            sampling: SamplingMode::Epoch,
            loss: LossKind::CrossEntropy,
            noise: NoiseSchedule::constant(0.005),
            r: 1.0,
            c0: 1.0,
            c1: 1.0,
            alpha: 0.5,
            seed: 0,
            noise_seed: 1,
            patience: Some(3),
            early_stop_tol: 1e-4,
            track_surrogates: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match &self.learning_rate {
            LearningRate::Constant(e) if !(*e > 0.0 && e.is_finite()) => return bad(format!("learning rate must be positive, got {e}")),
            LearningRate::PerStep(v) if v.is_empty() || v.iter().any(|e| !(*e > 0.0 && e.is_finite())) => {
                return bad("per-step learning rates must be non-empty and positive".into())
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if let Some(a) = self.clip {
            if !(a > 0.0) {
                return bad(format!("clip threshold must be positive, got {a}"));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        for (name, v) in [("R", self.r), ("c0", self.c0), ("c1", self.c1)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        self.loss.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.noise.validate(None).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// One SGD step as recorded in the step log.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub learning_rate: f64,
    pub batch_loss: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Read-only view handed to observers at the end of each epoch.
#[derive(Debug)]
pub struct EpochSnapshot<'a> {
    pub epoch: usize,
    pub step: usize,
    pub model: &'a MlpModel,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub surrogate: Option<&'a SurrogateState>,
}

/// Hooks called by [`run_training`]. All methods default to no-ops.
pub trait TrainingObserver {
    fn on_start(&mut self, _config: &TrainConfig, _model: &MlpModel) -> Result<()> {
        Ok(())
    }

    fn on_step(&mut self, _config: &TrainConfig, _record: &StepRecord) -> Result<()> {
        Ok(())
    }

    fn on_epoch(&mut self, _config: &TrainConfig, _snapshot: &EpochSnapshot<'_>) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub test_loss: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
    pub surrogate: Option<SurrogateState>,
}

const EVAL_CHUNK: usize = 1024;

fn evaluate(kind: LossKind, model: &MlpModel, data: &Dataset) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut acc = 0.0;
    let n = data.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let part = data.range(start, end);
        let w = (end - start) as f64;
        loss += w * loss_eval(kind, model, part.features(), part.labels())?;
        acc += w * accuracy(model, part.features(), part.labels())?;
        start = end;
    }
    Ok((loss / n.max(1) as f64, acc / n.max(1) as f64))
}

/// Runs (clipped) mini-batch SGD for `config.max_steps` steps.
///
/// Epochs are `⌊n/b⌋` steps. At every epoch boundary the full training set (and
/// the test set, if given) is evaluated, observers see a snapshot, and early
/// stopping is applied: training halts once the test loss has failed to beat its
/// best value by more than `early_stop_tol` for `patience` consecutive epochs.
pub fn run_training(
    config: &TrainConfig,
    mut model: MlpModel,
    train: &Dataset,
    test: Option<&Dataset>,
    observers: &mut [&mut dyn TrainingObserver],
) -> Result<TrainOutcome> {
    config.validate()?;
    let d = model.num_params();
    config.noise.validate(Some(d)).map_err(|e| match &config.noise {
        NoiseSchedule::Isotropic(_) => e,
        NoiseSchedule::Diagonal(_) => Error::Config(e.to_string()),
    })?;
    if config.batch_size > train.len() && config.sampling == SamplingMode::Epoch {
        return Err(Error::BatchTooLarge {
            batch: config.batch_size,
            n: train.len(),
        });
    }

    let mut outcome = TrainOutcome {
        model: model.clone(),
        steps: Vec::new(),
        epochs: Vec::new(),
        stopped_early: false,
        surrogate: None,
    };
    if config.max_steps == 0 {
        return Ok(outcome);
    }

    for obs in observers.iter_mut() {
        obs.on_start(config, &model)?;
    }

    let mut sampler = BatchSampler::new(config.seed, config.batch_size, config.sampling);
    let steps_per_epoch = sampler.steps_per_epoch(train.len()).max(1);
    let noise_rng = RngStream::new(config.noise_seed, streams::SURROGATE_NOISE);
    let mut surrogate = config.track_surrogates.then(|| SurrogateState::new(d));
    let mut theta = model.flatten();
    let mut best_test = f64::INFINITY;
    let mut stale_epochs = 0usize;

    for k in 1..=config.max_steps {
        let epoch = (k - 1) / steps_per_epoch + 1;
        let batch = sampler.next_batch(train)?;
        let (batch_loss, grad) = loss_and_grad(config.loss, &model, &batch.features, &batch.labels)?;
        if !batch_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: k,
                epoch,
                value: batch_loss,
            });
        }
        let grad_norm = grad.norm();
        let (update, clipped) = match config.clip {
            Some(a) => (clip_gradient(&grad, a)?, grad_norm > a),
            None => (grad, false),
        };
        let eta = config.learning_rate.at(k);
        theta = sgd_step(&theta, &update, eta)?;
        model.set_params(&theta)?;

        if let Some(state) = surrogate.as_mut() {
            state.advance(sample_noise(&config.noise, k, d, &noise_rng)?)?;
        }

        let record = StepRecord {
            step: k,
            epoch,
            learning_rate: eta,
            batch_loss,
            grad_norm,
            clipped,
        };
        for obs in observers.iter_mut() {
            obs.on_step(config, &record)?;
        }
        outcome.steps.push(record);

        if k % steps_per_epoch == 0 || k == config.max_steps {
            let (train_loss, train_accuracy) = evaluate(config.loss, &model, train)?;
            if !train_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: k,
                    epoch,
                    value: train_loss,
                });
            }
            let (test_loss, test_accuracy) = match test {
                Some(t) => {
                    let (l, a) = evaluate(config.loss, &model, t)?;
                    (Some(l), Some(a))
                }
                None => (None, None),
            };
            let snapshot = EpochSnapshot {
                epoch,
                step: k,
                model: &model,
                train_loss,
                train_accuracy,
                test_loss,
                test_accuracy,
                surrogate: surrogate.as_ref(),
            };
            for obs in observers.iter_mut() {
                obs.on_epoch(config, &snapshot)?;
            }
            outcome.epochs.push(EpochRecord {
                epoch,
                step: k,
                train_loss,
                train_accuracy,
                test_loss,
                test_accuracy,
            });

            if let (Some(p), Some(tl)) = (config.patience, test_loss) {
                if tl < best_test - config.early_stop_tol {
                    best_test = tl;
                    stale_epochs = 0;
                } else {
                    stale_epochs += 1;
                    if stale_epochs >= p {
                        outcome.stopped_early = true;
                        break;
                    }
                }
            }
        }
    }

    outcome.model = model;
    outcome.surrogate = surrogate;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_gaussian_mixture;

    #[test]
    fn sgd_step_arithmetic() {
        let theta = ParamVector::from(vec![1.0, 1.0]);
        let next = sgd_step(&theta, &[1.0, -1.0], 0.1).unwrap();
        assert_eq!(next.as_slice(), &[0.9, 1.1]);
        assert_eq!(sgd_step(&theta, &[0.0, 0.0], 0.1).unwrap(), theta);
        let g = [0.5, -2.0];
        let two = sgd_step(&sgd_step(&theta, &g, 0.1).unwrap(), &g, 0.1).unwrap();
        for (i, v) in two.iter().enumerate() {
            assert!((v - (theta[i] - 0.2 * g[i])).abs() < 1e-15);
        }
        assert!(sgd_step(&theta, &[1.0], 0.1).is_err());
    }

    #[test]
    fn clipping_cases() {
        assert_eq!(clip_gradient(&[3.0, 4.0], 5.0).unwrap().as_slice(), &[3.0, 4.0]);
        assert_eq!(clip_gradient(&[6.0, 8.0], 5.0).unwrap().as_slice(), &[3.0, 4.0]);
        assert_eq!(clip_gradient(&[0.0, 0.0], 1.0).unwrap().as_slice(), &[0.0, 0.0]);
        assert!(clip_gradient(&[1.0], 0.0).is_err());
    }

    #[test]
    fn surrogates() {
        let theta = ParamVector::from(vec![1.0, 2.0]);
        let mut st = SurrogateState::new(2);
        st.advance(ParamVector::from(vec![0.1, -0.1])).unwrap();
        assert_eq!(t1pm_virtual(&theta, &st).unwrap().as_slice(), &[1.1, 1.9]);
        assert_eq!(t2pm_virtual(&theta, &[0.1, -0.1]).unwrap().as_slice(), &[1.1, 1.9]);
        assert_eq!(t2pm_virtual(&theta, &[0.0, 0.0]).unwrap(), theta);
        let zero = SurrogateState::new(2);
        assert_eq!(t1pm_virtual(&theta, &zero).unwrap(), theta);
    }

    #[test]
    fn tiny_sigma_noise_is_tiny() {
        let d = 1000;
        let eps = sample_noise(&NoiseSchedule::constant(1e-12), 1, d, &RngStream::new(0, 0)).unwrap();
        assert!(eps.norm() < 1e-6 * (d as f64).sqrt());
    }

    #[test]
    fn noise_is_deterministic_per_step() {
        let rng = RngStream::new(5, streams::SURROGATE_NOISE);
        let s = NoiseSchedule::constant(0.1);
        assert_eq!(sample_noise(&s, 3, 10, &rng).unwrap(), sample_noise(&s, 3, 10, &rng).unwrap());
        assert_ne!(sample_noise(&s, 3, 10, &rng).unwrap(), sample_noise(&s, 4, 10, &rng).unwrap());
    }

    #[test]
    fn schedule_laws() {
        let s = NoiseSchedule::Isotropic(vec![0.1, 0.2]);
        assert_eq!(s.at(1), Perturbation::Isotropic(0.1));
        assert_eq!(s.at(5), Perturbation::Isotropic(0.2));
        match s.accumulated(3) {
            Perturbation::Isotropic(v) => assert!((v * v - (0.01 + 0.04 + 0.04)).abs() < 1e-15),
            _ => unreachable!(),
        }
        let diag = Perturbation::Diagonal(vec![1e-4, 1e-6]);
        assert!((diag.det_root() - 1e-5).abs() < 1e-18);
        assert_eq!(diag.min_variance(), 1e-6);
        assert!(NoiseSchedule::constant(0.0).validate(None).is_err());
        assert!(NoiseSchedule::diagonal(vec![1.0, -1.0]).validate(None).is_err());
        assert!(NoiseSchedule::diagonal(vec![1.0, 1.0]).validate(Some(3)).is_err());
    }

    #[test]
    fn zero_steps_returns_initial_model() {
        let ds = synth_gaussian_mixture(20, 3, 2, 0).unwrap();
        let model = MlpModel::init(&[3, 4, 2], &mut RngStream::new(0, streams::INIT)).unwrap();
        let cfg = TrainConfig {
            batch_size: 4,
            max_steps: 0,
            ..TrainConfig::default()
        };
        let out = run_training(&cfg, model.clone(), &ds, None, &mut []).unwrap();
        assert_eq!(out.model.flatten(), model.flatten());
        assert!(out.steps.is_empty() && out.epochs.is_empty());
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = synth_gaussian_mixture(20, 3, 2, 0).unwrap();
        let model = MlpModel::zeros(&[3, 2]).unwrap();
        for cfg in [
            TrainConfig { alpha: 1.0, ..TrainConfig::default() },
            TrainConfig { clip: Some(-1.0), ..TrainConfig::default() },
            TrainConfig { learning_rate: LearningRate::Constant(0.0), ..TrainConfig::default() },
        ] {
            assert!(matches!(run_training(&cfg, model.clone(), &ds, None, &mut []), Err(Error::Config(_))));
        }
    }
}
