use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ndnet::{loss_and_grad, loss_eval, LossKind, MlpModel, Tensor2};
use crate::optim::{NoiseSchedule, ParamVector, Perturbation};
use crate::rng::RngStream;

/// A loss as a function of the flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn loss(&self, theta: &[f64]) -> Result<f64>;
    fn gradient(&self, theta: &[f64]) -> Result<ParamVector>;
}

/// Mean loss of an MLP architecture over a fixed batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchObjective<'a> {
    pub dims: &'a [usize],
    pub features: &'a Tensor2,
    pub labels: &'a [usize],
    pub kind: LossKind,
}

impl Objective for BatchObjective<'_> {
    fn dim(&self) -> usize {
        MlpModel::param_count(self.dims)
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        let model = MlpModel::unflatten(self.dims, theta)?;
        loss_eval(self.kind, &model, self.features, self.labels)
    }

    fn gradient(&self, theta: &[f64]) -> Result<ParamVector> {
        let model = MlpModel::unflatten(self.dims, theta)?;
        Ok(loss_and_grad(self.kind, &model, self.features, self.labels)?.1)
    }
}

/// `½‖θ‖²` in any dimension.
#[derive(Debug, Clone, Copy)]
pub struct Quadratic {
    pub d: usize,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.d
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.d, theta)?;
        Ok(0.5 * theta.iter().map(|v| v * v).sum::<f64>())
    }

    fn gradient(&self, theta: &[f64]) -> Result<ParamVector> {
        check_dim(self.d, theta)?;
        Ok(theta.to_vec().into())
    }
}

/// `a·θ`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub a: Vec<f64>,
}

impl Objective for Linear {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn loss(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.a.len(), theta)?;
        Ok(self.a.iter().zip(theta).map(|(a, t)| a * t).sum())
    }

    fn gradient(&self, theta: &[f64]) -> Result<ParamVector> {
        check_dim(self.a.len(), theta)?;
        Ok(self.a.clone().into())
    }
}

fn check_dim(d: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != d {
        return Err(Error::shape("objective parameters", d, theta.len()));
    }
    Ok(())
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

fn mean_and_se(ys: &[f64]) -> Estimate {
    let m = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / m;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Estimate {
        value: mean,
        std_error: (var / m).sqrt(),
    }
}

/// `ξ = 2·E[f(θ+ε) − f(θ)]` for `ε` drawn from `noise`, using `pairs`
/// antithetic pairs `(ε, −ε)`. Pair `j` draws from `rng.substream(j)` and the
/// reduction is sequential, so the result does not depend on thread count.
pub fn flatness_estimate(
    objective: &dyn Objective,
    theta: &[f64],
    noise: &Perturbation,
    pairs: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    if pairs < 2 {
        return Err(Error::InvalidArgument(format!("flatness needs at least 2 antithetic pairs, got {pairs}")));
    }
    let d = objective.dim();
    check_dim(d, theta)?;
    let base = objective.loss(theta)?;
    let ys = (0..pairs as u64)
        .into_par_iter()
        .map(|j| {
            let mut eps = vec![0.0; d];
            noise.sample_into(&mut rng.substream(j), &mut eps)?;
            let plus: Vec<f64> = theta.iter().zip(&eps).map(|(t, e)| t + e).collect();
            let minus: Vec<f64> = theta.iter().zip(&eps).map(|(t, e)| t - e).collect();
            // 2·[½(f(θ+ε) + f(θ−ε)) − f(θ)]
            Ok(objective.loss(&plus)? + objective.loss(&minus)? - 2.0 * base)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_and_se(&ys))
}

/// Flatness at the accumulated perturbation `Σ_{t≤k} ε_t`.
pub fn flatness_t1pm(
    objective: &dyn Objective,
    theta: &[f64],
    schedule: &NoiseSchedule,
    k: usize,
    pairs: usize,
    rng: &RngStream,
) -> Result<Estimate> {
    if k == 0 {
        return Err(Error::InvalidArgument("accumulated flatness needs k ≥ 1".into()));
    }
    flatness_estimate(objective, theta, &schedule.accumulated(k), pairs, rng)
}

/// Rademacher-probe estimate of `tr ∇²f`, with Hessian-vector products from
/// central differences of the gradient at step `h`.
pub fn hutchinson_trace(objective: &dyn Objective, theta: &[f64], probes: usize, h: f64, rng: &RngStream) -> Result<Estimate> {
    if probes == 0 {
        return Err(Error::InvalidArgument("hutchinson needs at least one probe".into()));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    check_dim(objective.dim(), theta)?;
    let ys = (0..probes as u64)
        .into_par_iter()
        .map(|j| {
            let mut r = rng.substream(j);
            let z: Vec<f64> = (0..theta.len()).map(|_| r.rademacher()).collect();
            let plus: Vec<f64> = theta.iter().zip(&z).map(|(t, z)| t + h * z).collect();
            let minus: Vec<f64> = theta.iter().zip(&z).map(|(t, z)| t - h * z).collect();
            let (gp, gm) = (objective.gradient(&plus)?, objective.gradient(&minus)?);
            Ok(z.iter().zip(gp.iter().zip(gm.iter())).map(|(z, (p, m))| z * (p - m)).sum::<f64>() / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    if ys.len() == 1 {
        return Ok(Estimate {
            value: ys[0],
            std_error: f64::NAN,
        });
    }
    Ok(mean_and_se(&ys))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_sigma_gives_zero_flatness() {
        let q = Quadratic { d: 10 };
        let theta = vec![0.5; 10];
        let e = flatness_estimate(&q, &theta, &Perturbation::Isotropic(1e-12), 16, &RngStream::new(0, 4)).unwrap();
        assert!(e.value.abs() < 1e-8);
    }

    #[test]
    fn linear_loss_is_flat() {
        let lin = Linear {
            a: (0..8).map(|i| i as f64 - 3.5).collect(),
        };
        let theta = vec![0.1; 8];
        let e = flatness_estimate(&lin, &theta, &Perturbation::Isotropic(0.3), 32, &RngStream::new(1, 4)).unwrap();
        assert!(e.value.abs() <= 3.0 * e.std_error + 1e-12);
    }

    #[test]
    fn hutchinson_exact_cases() {
        let q = Quadratic { d: 25 };
        let theta = vec![0.2; 25];
        let e = hutchinson_trace(&q, &theta, 1, 1e-4, &RngStream::new(0, 6)).unwrap();
        assert!((e.value - 25.0).abs() < 1e-8);
        let lin = Linear { a: vec![1.0; 25] };
        let e = hutchinson_trace(&lin, &theta, 3, 1e-4, &RngStream::new(0, 6)).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let q = Quadratic { d: 2 };
        assert!(flatness_estimate(&q, &[0.0, 0.0], &Perturbation::Isotropic(0.1), 1, &RngStream::new(0, 0)).is_err());
        assert!(flatness_t1pm(&q, &[0.0, 0.0], &NoiseSchedule::constant(0.1), 0, 4, &RngStream::new(0, 0)).is_err());
    }
}
