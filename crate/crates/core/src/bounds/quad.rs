use crate::error::{Error, Result};

/// Adaptive Simpson settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    /// Absolute tolerance; the δ/ζ integrals scale it by min(η, 1).
    pub abs_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            abs_tol: 1e-10,
            max_depth: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    /// Sum of the local Richardson error estimates.
    pub error_estimate: f64,
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    err: &mut f64,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *err += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, err)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, err)
}

/// `∫_a^b f` by adaptive Simpson with Richardson correction.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: QuadratureSpec) -> Result<QuadResult> {
    if !(spec.abs_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("quadrature tolerance must be positive, got {}", spec.abs_tol)));
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument("quadrature limits must be finite".into()));
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    let whole = simpson(fa, fm, fb, a, b);
    let mut err = 0.0;
    let value = recurse(&f, a, b, fa, fm, fb, whole, spec.abs_tol, spec.max_depth, &mut err);
    Ok(QuadResult {
        value,
        error_estimate: err,
    })
}

/// `∫₀^η exp(sign·κ·(u^{1−α} − η^{1−α})) du` with `κ = coef/(2(1−α))`.
/// `sign = -1` exists only so the property suite can inject a fault.
pub(crate) fn decay_integral(eta: f64, alpha: f64, coef: f64, sign: f64, quad: QuadratureSpec) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {eta}")));
    }
    let p = 1.0 - alpha;
    let kappa = coef / (2.0 * p);
    let top = eta.powf(p);
    // the exponents are combined so the integrand stays in (0, 1]; the result is
    // then at most η, so the tolerance scales with η to stay relative for small steps
    let quad = QuadratureSpec {
        abs_tol: quad.abs_tol * eta.min(1.0),
        ..quad
    };
    let res = adaptive_simpson(|u| (sign * kappa * (u.powf(p) - top)).exp(), 0.0, eta, quad)?;
    Ok(res.value)
}

/// `δ = e^{−η^{1−α}/(2(1−α))} ∫₀^η e^{u^{1−α}/(2(1−α))} du`, always in `(0, η]`.
pub fn delta_s(eta: f64, alpha: f64, quad: QuadratureSpec) -> Result<f64> {
    decay_integral(eta, alpha, 1.0, 1.0, quad)
}

/// Anisotropic analogue of [`delta_s`] with exponent coefficient
/// `λ_min/(2 λ_max (1−α))`; equals `δ` when `λ_min = λ_max`.
pub fn zeta_s(eta: f64, alpha: f64, lambda_min: f64, lambda_max: f64, quad: QuadratureSpec) -> Result<f64> {
    if !(lambda_min > 0.0 && lambda_min <= lambda_max && lambda_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "eigenvalues must satisfy 0 < λ_min ≤ λ_max, got λ_min = {lambda_min}, λ_max = {lambda_max}"
        )));
    }
    decay_integral(eta, alpha, lambda_min / lambda_max, 1.0, quad)
}
