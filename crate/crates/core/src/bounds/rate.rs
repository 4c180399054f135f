use super::quad::{delta_s, QuadratureSpec};
use crate::error::{Error, Result};

/// Analytic bound model `a·n^{−2γ} + (c0c1/n)·√(k·2δη/σ²)` with `σ = c·n^{−γ}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModel {
    /// Flatness coefficient `a`.
    pub flatness_coef: f64,
    /// Noise scale `c`.
    pub sigma_coef: f64,
    pub gamma: f64,
    pub eta: f64,
    pub alpha: f64,
    pub steps: usize,
    pub c0: f64,
    pub c1: f64,
}

impl Default for RateModel {
    fn default() -> Self {
        RateModel {
            flatness_coef: 1.0,
            sigma_coef: 1.0,
            gamma: 1.0 / 3.0,
            eta: 0.01,
            alpha: 0.5,
            steps: 1000,
            c0: 1.0,
            c1: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatePoint {
    pub n: usize,
    pub sigma: f64,
    pub flatness: f64,
    pub trajectory: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateSweep {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log bound` on `log n` over all points.
    pub slope: f64,
    /// Same fit restricted to `n ≥ n_max/10`.
    pub top_decade_slope: f64,
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn least_squares_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument("slope fit needs at least two paired points".into()));
    }
    let m = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("slope fit needs distinct abscissae".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

impl RateModel {
    pub fn evaluate(&self, n: usize, delta: f64) -> RatePoint {
        let nf = n as f64;
        let sigma = self.sigma_coef * nf.powf(-self.gamma);
        let flatness = self.flatness_coef * nf.powf(-2.0 * self.gamma);
        let trajectory = self.c0 * self.c1 / nf * (self.steps as f64 * 2.0 * delta * self.eta / (sigma * sigma)).sqrt();
        RatePoint {
            n,
            sigma,
            flatness,
            trajectory,
            bound: flatness + trajectory,
        }
    }
}

/// Evaluates the bound model over `n_list` and fits log-log slopes.
pub fn rate_sweep(n_list: &[usize], model: &RateModel, quad: QuadratureSpec) -> Result<RateSweep> {
    if n_list.len() < 4 || n_list.contains(&0) {
        return Err(Error::InvalidArgument("rate sweep needs at least 4 positive sample sizes".into()));
    }
    let (lo, hi) = (*n_list.iter().min().unwrap(), *n_list.iter().max().unwrap());
    if (hi as f64) < 100.0 * lo as f64 {
        return Err(Error::InvalidArgument(format!("rate sweep must span two decades, got {lo}..{hi}")));
    }
    let mut sorted = n_list.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != n_list.len() {
        return Err(Error::InvalidArgument("rate sweep sample sizes must be distinct".into()));
    }
    let delta = delta_s(model.eta, model.alpha, quad)?;
    let points: Vec<RatePoint> = sorted.iter().map(|&n| model.evaluate(n, delta)).collect();
    let fit = |pts: &[&RatePoint]| {
        let x: Vec<f64> = pts.iter().map(|p| (p.n as f64).ln()).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.bound.ln()).collect();
        least_squares_slope(&x, &y)
    };
    let all: Vec<&RatePoint> = points.iter().collect();
    let top: Vec<&RatePoint> = points.iter().filter(|p| p.n as f64 * 10.0 >= hi as f64).collect();
    Ok(RateSweep {
        slope: fit(&all)?,
        top_decade_slope: fit(&top)?,
        points,
    })
}
