use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::rng::RngStream;

fn check_var(v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance must be positive, got {v}")));
    }
    Ok(())
}

/// `KL(N(μ1, v1) ‖ N(μ2, v2))`.
pub fn kl_gaussian_1d(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64> {
    check_var(var1)?;
    check_var(var2)?;
    Ok(0.5 * (var1 / var2 + (mu1 - mu2).powi(2) / var2 - 1.0 + (var2 / var1).ln()))
}

/// KL between diagonal Gaussians: the per-coordinate closed form, summed.
pub fn kl_gaussian(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    for (name, len) in [("var1", var1.len()), ("mu2", mu2.len()), ("var2", var2.len())] {
        if len != d {
            return Err(Error::shape(name, d, len));
        }
    }
    let mut total = 0.0;
    for i in 0..d {
        total += kl_gaussian_1d(mu1[i], var1[i], mu2[i], var2[i])?;
    }
    Ok(total)
}

fn phi(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Total variation between two 1-D Gaussians, from the density crossing points.
pub fn tv_gaussian_1d(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64> {
    check_var(var1)?;
    check_var(var2)?;
    let (s1, s2) = (var1.sqrt(), var2.sqrt());
    let p = |x: f64| phi((x - mu1) / s1);
    let q = |x: f64| phi((x - mu2) / s2);
    if var1 == var2 {
        return Ok(erf((mu1 - mu2).abs() / (2.0 * std::f64::consts::SQRT_2 * s1)));
    }
    // (x−μ2)²/v2 − (x−μ1)²/v1 + ln(v2/v1) = 0
    let a = 1.0 / var2 - 1.0 / var1;
    let b = 2.0 * (mu1 / var1 - mu2 / var2);
    let c = mu2 * mu2 / var2 - mu1 * mu1 / var1 + (var2 / var1).ln();
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    // cancellation-free roots; `a` can be tiny when the variances nearly agree
    let qq = -0.5 * (b + b.signum() * disc);
    let (x1, x2) = if qq == 0.0 { (0.0, 0.0) } else { (qq / a, c / qq) };
    let (r1, r2) = (x1.min(x2), x1.max(x2));
    let pieces = [
        p(r1) - q(r1),
        (p(r2) - p(r1)) - (q(r2) - q(r1)),
        (1.0 - p(r2)) - (1.0 - q(r2)),
    ];
    Ok(0.5 * pieces.iter().map(|v| v.abs()).sum::<f64>())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinskerCase {
    pub mu1: f64,
    pub var1: f64,
    pub mu2: f64,
    pub var2: f64,
    pub tv: f64,
    pub kl: f64,
}

impl PinskerCase {
    pub fn holds(&self) -> bool {
        self.tv <= (self.kl / 2.0).sqrt() + 1e-12
    }
}

/// Seeded grid of 1-D Gaussian pairs with TV and KL evaluated in closed form.
pub fn pinsker_grid(seed: u64, cases: usize) -> Result<Vec<PinskerCase>> {
    let mut rng = RngStream::new(seed, crate::rng::streams::CHECKS).substream(1);
    (0..cases)
        .map(|_| {
            let mu1 = 6.0 * rng.uniform() - 3.0;
            let mu2 = 6.0 * rng.uniform() - 3.0;
            let var1 = 0.05 + 4.95 * rng.uniform();
            let var2 = 0.05 + 4.95 * rng.uniform();
            Ok(PinskerCase {
                mu1,
                var1,
                mu2,
                var2,
                tv: tv_gaussian_1d(mu1, var1, mu2, var2)?,
                kl: kl_gaussian_1d(mu1, var1, mu2, var2)?,
            })
        })
        .collect()
}

/// One coordinate of a convolution pair `Z = X + Y`, `Z' = X' + Y'`, where
/// `X ~ N(m, v)` and `Y | X = x ~ N(a·x + c, s)` (primed likewise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearGaussian {
    pub x_mean: f64,
    pub x_var: f64,
    pub y_slope: f64,
    pub y_offset: f64,
    pub y_var: f64,
}

impl LinearGaussian {
    fn z_law(&self) -> (f64, f64) {
        let g = 1.0 + self.y_slope;
        (g * self.x_mean + self.y_offset, g * g * self.x_var + self.y_var)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lemma1Result {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates both sides of `KL(P_Z'‖P_Z) ≤ KL(P_X'‖P_X) + E_{x~X'} KL(P_{Y'|x}‖P_{Y|x})`
/// in closed form, summed over independent coordinates `(primed, unprimed)`.
pub fn lemma1_check(coords: &[(LinearGaussian, LinearGaussian)]) -> Result<Lemma1Result> {
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (p, u) in coords {
        let (mz_p, vz_p) = p.z_law();
        let (mz, vz) = u.z_law();
        lhs += kl_gaussian_1d(mz_p, vz_p, mz, vz)?;
        rhs += kl_gaussian_1d(p.x_mean, p.x_var, u.x_mean, u.x_var)?;
        // E_{x~X'} of ((a'−a)x + c'−c)²
        let beta = p.y_slope - u.y_slope;
        let gamma = p.y_offset - u.y_offset;
        let sq = (beta * p.x_mean + gamma).powi(2) + beta * beta * p.x_var;
        check_var(p.y_var)?;
        check_var(u.y_var)?;
        rhs += 0.5 * (p.y_var / u.y_var + sq / u.y_var - 1.0 + (u.y_var / p.y_var).ln());
    }
    Ok(Lemma1Result {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

/// Seeded random linear-Gaussian pairs with 1–3 coordinates each.
pub fn lemma1_grid(seed: u64, cases: usize) -> Vec<Vec<(LinearGaussian, LinearGaussian)>> {
    let mut rng = RngStream::new(seed, crate::rng::streams::CHECKS).substream(2);
    let draw = |rng: &mut RngStream| LinearGaussian {
        x_mean: 4.0 * rng.uniform() - 2.0,
        x_var: 0.1 + 2.9 * rng.uniform(),
        y_slope: 3.0 * rng.uniform() - 1.5,
        y_offset: 2.0 * rng.uniform() - 1.0,
        y_var: 0.1 + 2.9 * rng.uniform(),
    };
    (0..cases)
        .map(|_| {
            let dims = 1 + rng.index(3);
            (0..dims).map(|_| (draw(&mut rng), draw(&mut rng))).collect()
        })
        .collect()
}
