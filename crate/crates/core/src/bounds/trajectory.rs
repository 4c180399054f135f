use super::quad::{delta_s, zeta_s, QuadratureSpec};
use crate::error::{Error, Result};
use crate::optim::Perturbation;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// One step of a sub-Gaussian trajectory sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SubGaussianStep {
    pub eta: f64,
    pub noise: Perturbation,
    /// Per-sample gradient variance trace `tr V̂` at this step.
    pub grad_var_trace: f64,
    pub batch: usize,
}

/// One step of a bounded-loss or clipped trajectory sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleStep {
    pub eta: f64,
    pub noise: Perturbation,
    pub alpha: f64,
}

fn check_noise(noise: &Perturbation, d: Option<usize>) -> Result<()> {
    match noise {
        Perturbation::Isotropic(s) if !(*s > 0.0 && s.is_finite()) => {
            Err(Error::InvalidArgument(format!("σ must be positive, got {s}")))
        }
        Perturbation::Diagonal(v) => {
            if v.is_empty() || v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::InvalidArgument("diagonal covariance entries must be positive".into()));
            }
            match d {
                Some(d) if v.len() != d => Err(Error::shape("diagonal covariance", d, v.len())),
                _ => Ok(()),
            }
        }
        _ => Ok(()),
    }
}

/// `log(1 + η²·(tr V̂/b)/(d·s²))`, with `s² = |Σ|^{1/d}`.
pub fn subgaussian_increment(eta: f64, det_root: f64, grad_var_trace: f64, batch: usize, d: usize) -> Result<f64> {
    if !(det_root > 0.0) {
        return Err(Error::InvalidArgument(format!("noise variance must be positive, got {det_root}")));
    }
    if batch == 0 || d == 0 {
        return Err(Error::InvalidArgument("batch size and dimension must be positive".into()));
    }
    Ok((eta * eta * (grad_var_trace / batch as f64) / (d as f64 * det_root)).ln_1p())
}

/// `√(R²d/n · Σ)`.
pub fn subgaussian_trajectory(sum: f64, r: f64, d: usize, n: usize) -> f64 {
    (r * r * d as f64 / n as f64 * sum).sqrt()
}

fn subgaussian_sum(steps: &[SubGaussianStep], d: usize) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for s in steps {
        check_noise(&s.noise, Some(d))?;
        acc.add(subgaussian_increment(s.eta, s.noise.det_root(), s.grad_var_trace, s.batch, d)?);
    }
    Ok(acc.value())
}

/// Sub-Gaussian trajectory term under isotropic noise.
pub fn traj_subgaussian_bound(steps: &[SubGaussianStep], r: f64, d: usize, n: usize) -> Result<f64> {
    if let Some(s) = steps.iter().find(|s| !matches!(s.noise, Perturbation::Isotropic(_))) {
        return Err(Error::InvalidArgument(format!(
            "isotropic trajectory bound given non-isotropic noise {:?}",
            s.noise
        )));
    }
    Ok(subgaussian_trajectory(subgaussian_sum(steps, d)?, r, d, n))
}

/// Sub-Gaussian trajectory term under diagonal `Σ_s`; `σ_s²` becomes `|Σ_s|^{1/d}`.
pub fn traj_subgaussian_general(steps: &[SubGaussianStep], r: f64, d: usize, n: usize) -> Result<f64> {
    Ok(subgaussian_trajectory(subgaussian_sum(steps, d)?, r, d, n))
}

/// `2δη/σ²` for isotropic noise, `2ζη/λ_min` for diagonal noise.
pub fn bounded_increment(step: &ScheduleStep, quad: QuadratureSpec) -> Result<f64> {
    check_noise(&step.noise, None)?;
    match &step.noise {
        Perturbation::Isotropic(s) => Ok(2.0 * delta_s(step.eta, step.alpha, quad)? * step.eta / (s * s)),
        Perturbation::Diagonal(_) => {
            let (lo, hi) = (step.noise.min_variance(), step.noise.max_variance());
            Ok(2.0 * zeta_s(step.eta, step.alpha, lo, hi, quad)? * step.eta / lo)
        }
    }
}

/// `(c0·c1/n)·√(Σ_s 2δ_s η_s/σ_s²)` (ζ_s and λ_min for diagonal noise).
pub fn traj_bounded_bound(c0: f64, c1: f64, n: usize, steps: &[ScheduleStep], quad: QuadratureSpec) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for s in steps {
        acc.add(bounded_increment(s, quad)?);
    }
    Ok(c0 * c1 / n as f64 * acc.value().sqrt())
}

/// `log(1 + A²η²/|Σ|^{1/d})`.
pub fn clipped_subgaussian_increment(a: f64, eta: f64, noise: &Perturbation) -> Result<f64> {
    check_noise(noise, None)?;
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!("clip threshold must be positive, got {a}")));
    }
    Ok((a * a * eta * eta / noise.det_root()).ln_1p())
}

/// `√((R²d/n) Σ_s log(1 + A²η_s²/σ_s²))`.
pub fn clipped_subgaussian_bound(r: f64, d: usize, n: usize, a: f64, steps: &[ScheduleStep]) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for s in steps {
        check_noise(&s.noise, Some(d))?;
        acc.add(clipped_subgaussian_increment(a, s.eta, &s.noise)?);
    }
    Ok(subgaussian_trajectory(acc.value(), r, d, n))
}

/// `2δA²b²η/(n²σ²)` (ζ and λ_min for diagonal noise).
pub fn clipped_bounded_increment(a: f64, b: usize, n: usize, step: &ScheduleStep, quad: QuadratureSpec) -> Result<f64> {
    if !(a > 0.0) || b == 0 {
        return Err(Error::InvalidArgument("clip threshold and batch size must be positive".into()));
    }
    check_noise(&step.noise, None)?;
    let (factor, var) = match &step.noise {
        Perturbation::Isotropic(s) => (delta_s(step.eta, step.alpha, quad)?, s * s),
        Perturbation::Diagonal(_) => {
            let (lo, hi) = (step.noise.min_variance(), step.noise.max_variance());
            (zeta_s(step.eta, step.alpha, lo, hi, quad)?, lo)
        }
    };
    let (b, n) = (b as f64, n as f64);
    Ok(2.0 * factor * a * a * (b * b) * step.eta / (n * n * var))
}

/// `2c0·√(Σ_s 2δ_s A² b² η_s/(n² σ_s²))`.
pub fn clipped_bounded_bound(c0: f64, a: f64, b: usize, n: usize, steps: &[ScheduleStep], quad: QuadratureSpec) -> Result<f64> {
    let mut acc = CompensatedSum::default();
    for s in steps {
        acc.add(clipped_bounded_increment(a, b, n, s, quad)?);
    }
    Ok(2.0 * c0 * acc.value().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iso(eta: f64, sigma: f64, k: usize) -> Vec<ScheduleStep> {
        vec![
            ScheduleStep {
                eta,
                noise: Perturbation::Isotropic(sigma),
                alpha: 0.5,
            };
            k
        ]
    }

    #[test]
    fn single_step_subgaussian_value() {
        let step = SubGaussianStep {
            eta: 0.01,
            noise: Perturbation::Isotropic(0.005),
            grad_var_trace: 2.5,
            batch: 1,
        };
        let b = traj_subgaussian_bound(&[step], 1.0, 100, 1000).unwrap();
        let oracle = (0.1 * 1.1f64.ln()).sqrt();
        assert!((b - oracle).abs() < 1e-12);
        assert!((b - 0.09763).abs() < 1e-5);
    }

    #[test]
    fn zero_variance_gives_zero_trajectory() {
        let step = SubGaussianStep {
            eta: 0.01,
            noise: Perturbation::Isotropic(0.005),
            grad_var_trace: 0.0,
            batch: 8,
        };
        assert_eq!(traj_subgaussian_bound(&vec![step; 5], 1.0, 10, 100).unwrap(), 0.0);
    }

    #[test]
    fn bounded_chain() {
        let q = QuadratureSpec::default();
        assert_eq!(traj_bounded_bound(1.0, 1.0, 1000, &[], q).unwrap(), 0.0);
        let v = traj_bounded_bound(1.0, 1.0, 1000, &iso(0.01, 0.005, 100), q).unwrap();
        let delta = 2.0 * (0.1 - 1.0) + 2.0 * (-0.1f64).exp();
        let oracle = (100.0 * 2.0 * delta * 0.01 / 2.5e-5).sqrt() / 1000.0;
        assert!((v - oracle).abs() < 1e-8 * oracle, "{v} vs {oracle}");
        assert!((v - 0.02782).abs() < 1e-5);
        let half = traj_bounded_bound(1.0, 1.0, 2000, &iso(0.01, 0.005, 100), q).unwrap();
        assert_eq!(half * 2.0, v);
    }

    #[test]
    fn clipped_closed_forms() {
        let v = clipped_subgaussian_bound(1.0, 2, 100, 5.0, &iso(0.1, 0.1, 4)).unwrap();
        assert!((v - (0.02 * 4.0 * 26f64.ln()).sqrt()).abs() < 1e-14);
        assert!((v - 0.5105).abs() < 1e-4);
        let tiny = clipped_subgaussian_bound(1.0, 2, 100, 1e-12, &iso(0.1, 0.1, 4)).unwrap();
        assert!(tiny < 1e-10);
        let q = QuadratureSpec::default();
        let b1 = clipped_bounded_bound(1.0, 5.0, 64, 10_000, &iso(0.001, 0.005, 50), q).unwrap();
        let b2 = clipped_bounded_bound(1.0, 5.0, 128, 10_000, &iso(0.001, 0.005, 50), q).unwrap();
        assert_eq!(b2, 2.0 * b1);
        assert_eq!(clipped_bounded_bound(1.0, 5.0, 64, 10_000, &[], q).unwrap(), 0.0);
    }

    #[test]
    fn compensated_sum_is_exact_on_repeats() {
        let mut s = CompensatedSum::default();
        for _ in 0..1000 {
            s.add(0.1);
        }
        assert!((s.value() - 100.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_zero_sigma() {
        assert!(clipped_subgaussian_bound(1.0, 2, 10, 1.0, &iso(0.1, 0.0, 1)).is_err());
        assert!(subgaussian_increment(0.1, 0.0, 1.0, 1, 1).is_err());
    }
}
