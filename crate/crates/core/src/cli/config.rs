use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundFamily, BoundOptions, QuadratureSpec, RateModel};
use crate::data::{load_mnist_idx, synth_gaussian_mixture, Dataset, SamplingMode};
use crate::error::{Error, Result};
use crate::ndnet::LossKind;
use crate::optim::{LearningRate, NoiseSchedule, TrainConfig};

/// Full experiment description, read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Overrides `seed` for the analysis-only surrogate noise.
    pub noise_seed: Option<u64>,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub noise: NoiseConfig,
    pub bounds: BoundsConfig,
    pub rate_model: RateModelConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            noise_seed: None,
            out: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            train: TrainSection::default(),
            noise: NoiseConfig::default(),
            bounds: BoundsConfig::default(),
            rate_model: RateModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Train subset from the training files; test and probe are disjoint
    /// slices of the test files. `train_size = null` uses the full training set.
    Mnist {
        dir: PathBuf,
        #[serde(default = "default_train_size")]
        train_size: Option<usize>,
        #[serde(default = "default_test_size")]
        test_size: usize,
        #[serde(default = "default_probe_size")]
        probe_size: usize,
        /// Seeded subset order; `null` takes the first samples in file order.
        #[serde(default)]
        subset_seed: Option<u64>,
    },
    Synthetic {
        n_train: usize,
        n_test: usize,
        n_probe: usize,
        dims: usize,
        classes: usize,
    },
}

fn default_train_size() -> Option<usize> {
    Some(10_000)
}
fn default_test_size() -> usize {
    2_000
}
fn default_probe_size() -> usize {
    512
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mnist {
            dir: PathBuf::from("data/mnist"),
            train_size: default_train_size(),
            test_size: default_test_size(),
            probe_size: default_probe_size(),
            subset_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { hidden: vec![512] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LearningRateConfig {
    Constant(f64),
    PerStep(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: LearningRateConfig,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub max_steps: Option<usize>,
    pub clip: Option<f64>,
    pub sampling: SamplingMode,
    pub loss: LossKind,
    pub patience: Option<usize>,
    pub early_stop_tol: f64,
    pub r: f64,
    pub c0: f64,
    pub c1: f64,
    pub alpha: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            learning_rate: LearningRateConfig::Constant(0.01),
            batch_size: 64,
            epochs: 30,
            max_steps: None,
            clip: None,
            sampling: SamplingMode::Epoch,
            loss: LossKind::CrossEntropy,
            patience: Some(3),
            early_stop_tol: 1e-4,
            r: 1.0,
            c0: 1.0,
            c1: 1.0,
            alpha: 0.5,
        }
    }
}

/// Exactly one of the fields must be set; an empty object means `σ = 0.005`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma: Option<f64>,
    pub sigma_per_step: Option<Vec<f64>>,
    /// `σ = c·n^{−γ}` with `n` the training-set size.
    pub scaling: Option<NoiseScaling>,
    /// Diagonal of `Σ`, one variance per parameter.
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseScaling {
    pub c: f64,
    pub gamma: f64,
}

impl NoiseConfig {
    pub fn schedule(&self, n_train: usize) -> Result<NoiseSchedule> {
        let set = [
            self.sigma.is_some(),
            self.sigma_per_step.is_some(),
            self.scaling.is_some(),
            self.diagonal.is_some(),
        ]
        .iter()
        .filter(|b| **b)
        .count();
        if set > 1 {
            return Err(Error::Config("noise: set at most one of sigma, sigma_per_step, scaling, diagonal".into()));
        }
        let s = if let Some(s) = self.sigma {
            NoiseSchedule::constant(s)
        } else if let Some(v) = &self.sigma_per_step {
            NoiseSchedule::Isotropic(v.clone())
        } else if let Some(sc) = self.scaling {
            NoiseSchedule::scaled(sc.c, sc.gamma, n_train)
        } else if let Some(v) = &self.diagonal {
            NoiseSchedule::diagonal(v.clone())
        } else {
            NoiseSchedule::constant(0.005)
        };
        s.validate(None).map_err(|e| Error::Config(format!("noise: {e}")))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// Antithetic pairs per flatness estimate.
    pub pairs: usize,
    pub families: Vec<BoundFamily>,
    pub quad_tol: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        let o = BoundOptions::default();
        BoundsConfig {
            pairs: o.pairs,
            families: o.families,
            quad_tol: o.quad.abs_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RateModelConfig {
    pub flatness_coef: f64,
    pub sigma_coef: f64,
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub steps: usize,
    pub c0: f64,
    pub c1: f64,
}

impl Default for RateModelConfig {
    fn default() -> Self {
        let m = RateModel::default();
        RateModelConfig {
            flatness_coef: m.flatness_coef,
            sigma_coef: m.sigma_coef,
            gamma: m.gamma,
            eta: m.eta,
            alpha: m.alpha,
            steps: m.steps,
            c0: m.c0,
            c1: m.c1,
        }
    }
}

impl RateModelConfig {
    pub fn model(&self) -> RateModel {
        RateModel {
            flatness_coef: self.flatness_coef,
            sigma_coef: self.sigma_coef,
            gamma: self.gamma,
            eta: self.eta,
            alpha: self.alpha,
            steps: self.steps,
            c0: self.c0,
            c1: self.c1,
        }
    }
}

/// Training, test and probe splits.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub probe: Dataset,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match &self.dataset {
            DatasetConfig::Mnist {
                train_size,
                test_size,
                probe_size,
                ..
            } => {
                if *train_size == Some(0) || *test_size == 0 || *probe_size < 2 {
                    return bad("dataset: train/test sizes must be positive and probe_size ≥ 2".into());
                }
            }
            DatasetConfig::Synthetic {
                n_train,
                n_test,
                n_probe,
                dims,
                classes,
            } => {
                if *classes == 0 || *dims == 0 || *n_train < *classes || *n_test == 0 || *n_probe < 2 {
                    return bad("dataset: synthetic sizes must be positive, n_train ≥ classes, n_probe ≥ 2".into());
                }
            }
        }
        if self.model.hidden.contains(&0) {
            return bad("model: hidden widths must be positive".into());
        }
        if self.train.epochs == 0 && self.train.max_steps.is_none() {
            return bad("train: epochs must be positive".into());
        }
        if self.bounds.pairs < 2 {
            return bad("bounds: pairs must be at least 2".into());
        }
        if !(self.bounds.quad_tol > 0.0) {
            return bad("bounds: quad_tol must be positive".into());
        }
        self.noise.schedule(1)?;
        self.train_config(1, 1)?.validate()
    }

    /// Builds the optimizer configuration for a training set of `n_train`
    /// samples split into `steps_per_epoch` steps.
    pub fn train_config(&self, n_train: usize, steps_per_epoch: usize) -> Result<TrainConfig> {
        let t = &self.train;
        Ok(TrainConfig {
            learning_rate: match &t.learning_rate {
                LearningRateConfig::Constant(e) => LearningRate::Constant(*e),
                LearningRateConfig::PerStep(v) => LearningRate::PerStep(v.clone()),
            },
            batch_size: t.batch_size,
            max_steps: t.max_steps.unwrap_or(t.epochs * steps_per_epoch),
            clip: t.clip,
            sampling: t.sampling,
            loss: t.loss,
            noise: self.noise.schedule(n_train)?,
            r: t.r,
            c0: t.c0,
            c1: t.c1,
            alpha: t.alpha,
            seed: self.seed,
            noise_seed: self.noise_seed.unwrap_or(self.seed),
            patience: t.patience,
            early_stop_tol: t.early_stop_tol,
            // the trace observer works from closed-form covariances, never the realized noise path
            track_surrogates: false,
        })
    }

    pub fn bound_options(&self) -> BoundOptions {
        BoundOptions {
            pairs: self.bounds.pairs,
            families: self.bounds.families.clone(),
            seed: self.seed,
            quad: QuadratureSpec {
                abs_tol: self.bounds.quad_tol,
                ..QuadratureSpec::default()
            },
        }
    }

    /// Loads or generates the three splits. Relative MNIST paths resolve
    /// against the working directory.
    pub fn load_splits(&self) -> Result<Splits> {
        match &self.dataset {
            DatasetConfig::Mnist {
                dir,
                train_size,
                test_size,
                probe_size,
                subset_seed,
            } => {
                let full_train = load_mnist_idx(dir.join("train-images-idx3-ubyte"), dir.join("train-labels-idx1-ubyte"))?;
                let full_test = load_mnist_idx(dir.join("t10k-images-idx3-ubyte"), dir.join("t10k-labels-idx1-ubyte"))?;
                let train = match train_size {
                    Some(m) => full_train.subset(*m, *subset_seed)?,
                    None => full_train,
                };
                if test_size + probe_size > full_test.len() {
                    return Err(Error::Config(format!(
                        "dataset: test_size + probe_size = {} exceeds {} test samples",
                        test_size + probe_size,
                        full_test.len()
                    )));
                }
                let order = full_test.subset_order(*subset_seed);
                Ok(Splits {
                    train,
                    test: full_test.select(&order[..*test_size]),
                    probe: full_test.select(&order[*test_size..test_size + probe_size]),
                })
            }
            DatasetConfig::Synthetic {
                n_train,
                n_test,
                n_probe,
                dims,
                classes,
            } => {
                // one draw so the three splits share class means
                let all = synth_gaussian_mixture(n_train + n_test + n_probe, *dims, *classes, self.seed)?;
                Ok(Splits {
                    train: all.range(0, *n_train),
                    test: all.range(*n_train, n_train + n_test),
                    probe: all.range(n_train + n_test, n_train + n_test + n_probe),
                })
            }
        }
    }

    pub fn layer_dims(&self, input: usize, classes: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(&self.model.hidden);
        dims.push(classes);
        dims
    }
}
