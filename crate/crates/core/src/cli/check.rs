use std::fmt;
use std::str::FromStr;

use crate::bounds::quad::decay_integral;
use crate::bounds::{
    clipped_bounded_bound, clipped_subgaussian_bound, delta_s, flatness_estimate, flatness_t1pm, grad_variance_trace,
    lemma1_check, lemma1_grid, pinsker_grid, rate_sweep, traj_subgaussian_bound, traj_subgaussian_general, zeta_s,
    LinearGaussian, Quadratic, QuadratureSpec, RateModel, ScheduleStep, SubGaussianStep,
};
use crate::data::synth_gaussian_mixture;
use crate::error::{Error, Result};
use crate::ndnet::{loss_and_grad, loss_eval, LossKind, MlpModel};
use crate::optim::{clip_gradient, NoiseSchedule, ParamVector, Perturbation};
use crate::rng::{streams, RngStream};

/// Deliberate defects for negative-control runs of the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of the exponent inside the δ integral.
    DeltaSign,
}

impl FromStr for Fault {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delta-sign" => Ok(Fault::DeltaSign),
            other => Err(Error::Config(format!("unknown fault {other:?}; expected delta-sign"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub results: Vec<PropertyResult>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(f, "[{}] {:<34} {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail)?;
        }
        let passed = self.results.iter().filter(|r| r.passed).count();
        write!(f, "{passed}/{} properties passed", self.results.len())
    }
}

const ETA_GRID: [f64; 7] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];
const ALPHA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

fn delta_with(fault: Option<Fault>, eta: f64, alpha: f64, quad: QuadratureSpec) -> Result<f64> {
    let sign = if fault == Some(Fault::DeltaSign) { -1.0 } else { 1.0 };
    decay_integral(eta, alpha, 1.0, sign, quad)
}

fn gradient_check(width: usize, seed: u64) -> Result<f64> {
    let data = synth_gaussian_mixture(8, 5, 3, seed)?;
    let dims = [5, width, 3];
    let model = MlpModel::init(&dims, &mut RngStream::new(seed, streams::INIT))?;
    let (_, grad) = loss_and_grad(LossKind::CrossEntropy, &model, data.features(), data.labels())?;
    let theta = model.flatten();
    let mut rng = RngStream::new(seed, streams::CHECKS).substream(width as u64);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let i = rng.index(theta.len());
        let h = 1e-5 * (1.0 + theta[i].abs());
        let mut p = theta.clone();
        p[i] += h;
        let mut m = theta.clone();
        m[i] -= h;
        let fp = loss_eval(LossKind::CrossEntropy, &MlpModel::unflatten(&dims, &p)?, data.features(), data.labels())?;
        let fm = loss_eval(LossKind::CrossEntropy, &MlpModel::unflatten(&dims, &m)?, data.features(), data.labels())?;
        let fd = (fp - fm) / (2.0 * h);
        let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

type Property = (&'static str, Box<dyn Fn() -> Result<(bool, String)>>);

/// Runs every named property; a property that errors counts as failed.
pub fn cmd_check(fault: Option<Fault>) -> CheckReport {
    let quad = QuadratureSpec::default();
    let props: Vec<Property> = vec![
        (
            "gradient_finite_difference",
            Box::new(|| {
                let mut worst: f64 = 0.0;
                for w in [4, 16, 64] {
                    worst = worst.max(gradient_check(w, 11)?);
                }
                Ok((worst < 1e-4, format!("max relative error {worst:.2e} over widths 4/16/64")))
            }),
        ),
        (
            "delta_within_step_size",
            Box::new(move || {
                let mut bad = 0;
                for eta in ETA_GRID {
                    for alpha in ALPHA_GRID {
                        let d = delta_with(fault, eta, alpha, quad)?;
                        if !(d > 0.0 && d <= eta) {
                            bad += 1;
                        }
                    }
                }
                Ok((bad == 0, format!("{bad} of {} grid points violate 0 < δ ≤ η", ETA_GRID.len() * ALPHA_GRID.len())))
            }),
        ),
        (
            "delta_closed_form_alpha_half",
            Box::new(move || {
                let s = 0.1f64;
                let closed = 2.0 * (s - 1.0) + 2.0 * (-s).exp();
                let d = delta_with(fault, 0.01, 0.5, quad)?;
                Ok(((d - closed).abs() < 1e-8, format!("δ(0.01, 0.5) = {d:.10e}, closed form {closed:.10e}")))
            }),
        ),
        (
            "zeta_equals_delta_isotropic",
            Box::new(move || {
                let mut worst: f64 = 0.0;
                for eta in ETA_GRID {
                    for alpha in ALPHA_GRID {
                        worst = worst.max((zeta_s(eta, alpha, 0.3, 0.3, quad)? - delta_s(eta, alpha, quad)?).abs());
                    }
                }
                Ok((worst <= 1e-10, format!("max |ζ − δ| = {worst:.2e}")))
            }),
        ),
        (
            "diagonal_matches_isotropic",
            Box::new(|| {
                let d = 50;
                let mut rng = RngStream::new(3, streams::CHECKS).substream(10);
                let iso: Vec<SubGaussianStep> = (0..40)
                    .map(|_| SubGaussianStep {
                        eta: 0.001 + 0.1 * rng.uniform(),
                        noise: Perturbation::Isotropic(0.001 + 0.05 * rng.uniform()),
                        grad_var_trace: 10.0 * rng.uniform(),
                        batch: 1 + rng.index(64),
                    })
                    .collect();
                let diag: Vec<SubGaussianStep> = iso
                    .iter()
                    .map(|s| SubGaussianStep {
                        noise: match s.noise {
                            Perturbation::Isotropic(sig) => Perturbation::Diagonal(vec![sig * sig; d]),
                            _ => unreachable!(),
                        },
                        ..s.clone()
                    })
                    .collect();
                let a = traj_subgaussian_bound(&iso, 1.0, d, 1000)?;
                let b = traj_subgaussian_general(&diag, 1.0, d, 1000)?;
                Ok(((a - b).abs() <= 1e-14, format!("|difference| = {:.2e}", (a - b).abs())))
            }),
        ),
        (
            "clipped_sqrt_k_scaling",
            Box::new(|| {
                let step = ScheduleStep {
                    eta: 0.1,
                    noise: Perturbation::Isotropic(0.1),
                    alpha: 0.5,
                };
                let mut worst: f64 = 0.0;
                for k in [1usize, 4, 10, 100, 1000] {
                    let acc = clipped_subgaussian_bound(1.0, 2, 100, 5.0, &vec![step.clone(); k])?;
                    let closed = (2.0 * k as f64 * 26f64.ln() / 100.0).sqrt();
                    worst = worst.max((acc - closed).abs());
                }
                Ok((worst <= 1e-12, format!("max |accumulated − closed form| = {worst:.2e}")))
            }),
        ),
        (
            "clipped_bounds_monotone",
            Box::new(move || {
                let mut rng = RngStream::new(4, streams::CHECKS).substream(11);
                let steps: Vec<ScheduleStep> = (0..60)
                    .map(|_| ScheduleStep {
                        eta: 0.001 + 0.05 * rng.uniform(),
                        noise: Perturbation::Isotropic(0.001 + 0.02 * rng.uniform()),
                        alpha: 0.5,
                    })
                    .collect();
                let mut prev = (0.0, 0.0);
                let mut ok = true;
                for k in 0..=steps.len() {
                    let a = clipped_subgaussian_bound(1.0, 10, 1000, 5.0, &steps[..k])?;
                    let b = clipped_bounded_bound(1.0, 5.0, 64, 1000, &steps[..k], quad)?;
                    ok &= a >= prev.0 && b >= prev.1;
                    prev = (a, b);
                }
                Ok((ok, "both clipped bounds non-decreasing over 60 steps".into()))
            }),
        ),
        (
            "grad_variance_bruteforce",
            Box::new(|| {
                let mut rng = RngStream::new(5, streams::CHECKS).substream(12);
                let grads: Vec<ParamVector> = (0..50).map(|_| (0..7).map(|_| rng.normal()).collect::<Vec<_>>().into()).collect();
                let stats = grad_variance_trace(&grads)?;
                let mut brute = 0.0;
                for j in 0..7 {
                    let mean = grads.iter().map(|g| g[j]).sum::<f64>() / 50.0;
                    brute += grads.iter().map(|g| (g[j] - mean).powi(2)).sum::<f64>() / 50.0;
                }
                let err = (stats.trace - brute).abs();
                Ok((err <= 1e-12, format!("|welford − brute force| = {err:.2e}")))
            }),
        ),
        (
            "kl_convolution_gaussian_grid",
            Box::new(|| {
                let base = LinearGaussian {
                    x_mean: 0.0,
                    x_var: 1.0,
                    y_slope: 0.0,
                    y_offset: 0.0,
                    y_var: 1.0,
                };
                let analytic = lemma1_check(&[(LinearGaussian { x_mean: 1.0, ..base }, base)])?;
                let mut ok = analytic.holds && (analytic.lhs - 0.25).abs() < 1e-15 && (analytic.rhs - 0.5).abs() < 1e-15;
                let mut held = 0;
                let grid = lemma1_grid(0, 100);
                for case in &grid {
                    if lemma1_check(case)?.holds {
                        held += 1;
                    }
                }
                ok &= held == grid.len();
                Ok((ok, format!("analytic 0.25 ≤ 0.5; {held}/{} random cases hold", grid.len())))
            }),
        ),
        (
            "pinsker_grid",
            Box::new(|| {
                let grid = pinsker_grid(0, 100)?;
                let held = grid.iter().filter(|c| c.holds()).count();
                Ok((held == grid.len(), format!("{held}/{} cases satisfy TV ≤ √(KL/2)", grid.len())))
            }),
        ),
        (
            "flatness_quadratic_oracle",
            Box::new(|| {
                let q = Quadratic { d: 10 };
                let theta = vec![0.3; 10];
                let mut inside = 0;
                for trial in 0..100 {
                    let rng = RngStream::new(trial, streams::CHECKS).substream(13);
                    let e = flatness_estimate(&q, &theta, &Perturbation::Isotropic(0.1), 256, &rng)?;
                    if (e.value - 0.1).abs() <= 3.0 * e.std_error {
                        inside += 1;
                    }
                }
                Ok((inside >= 99, format!("{inside}/100 trials within 3 standard errors of dσ² = 0.1")))
            }),
        ),
        (
            "t1pm_t2pm_flatness_ratio",
            Box::new(|| {
                let d = 100;
                let q = Quadratic { d };
                let theta = vec![0.0; d];
                let schedule = NoiseSchedule::constant(0.005);
                let mut detail = Vec::new();
                let mut ok = true;
                for k in [10usize, 100] {
                    let t2 = flatness_estimate(&q, &theta, &schedule.at(k), 256, &RngStream::new(k as u64, streams::FLATNESS_T2PM))?;
                    let t1 = flatness_t1pm(&q, &theta, &schedule, k, 256, &RngStream::new(k as u64, streams::FLATNESS_T1PM))?;
                    let ratio = t1.value / t2.value;
                    ok &= (ratio / k as f64 - 1.0).abs() <= 0.1;
                    detail.push(format!("k={k}: ratio {ratio:.3}"));
                }
                Ok((ok, detail.join(", ")))
            }),
        ),
        (
            "clip_idempotent",
            Box::new(|| {
                let mut rng = RngStream::new(6, streams::CHECKS).substream(14);
                let mut ok = true;
                for _ in 0..100 {
                    let g: Vec<f64> = (0..9).map(|_| 5.0 * rng.normal()).collect();
                    let a = 0.1 + 10.0 * rng.uniform();
                    let once = clip_gradient(&g, a)?;
                    ok &= clip_gradient(&once, a)? == once && once.norm() <= a * (1.0 + 1e-12);
                }
                Ok((ok, "clip(clip(g, A), A) = clip(g, A) on 100 random gradients".into()))
            }),
        ),
        (
            "rate_slope_optimal_gamma",
            Box::new(move || {
                let ns = [100, 1_000, 10_000, 100_000];
                let third = rate_sweep(&ns, &RateModel::default(), quad)?;
                let fifth = rate_sweep(&ns, &RateModel { gamma: 0.2, ..RateModel::default() }, quad)?;
                let ok = (third.slope + 2.0 / 3.0).abs() <= 0.05 && (fifth.top_decade_slope + 0.4).abs() <= 0.05;
                Ok((ok, format!("γ=1/3 slope {:.4}, γ=0.2 top-decade slope {:.4}", third.slope, fifth.top_decade_slope)))
            }),
        ),
    ];

    let results = props
        .into_iter()
        .map(|(name, f)| match f() {
            Ok((passed, detail)) => PropertyResult { name, passed, detail },
            Err(e) => PropertyResult {
                name,
                passed: false,
                detail: format!("error: {e}"),
            },
        })
        .collect();
    CheckReport { results }
}
