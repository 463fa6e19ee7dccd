use alloc::vec::Vec;

use super::NumError;

/// Central-difference gradient of `f` at `point`.
pub fn numeric_gradient<F>(mut f: F, point: &[f64], eps: f64) -> Result<Vec<f64>, NumError>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let hi = f(&x);
        x[i] = orig - eps;
        let lo = f(&x);
        x[i] = orig;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(NumError::NonFinite);
        }
        out.push((hi - lo) / (2.0 * eps));
    }
    Ok(out)
}

/// Relative error `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// vanishing coordinates from dominating through round-off.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Largest per-coordinate relative error between `analytic` and a central
/// difference of `f`.
pub fn grad_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64) -> Result<f64, NumError>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(NumError::Shape("analytic gradient length differs from point"));
    }
    if analytic.iter().any(|g| !g.is_finite()) {
        return Err(NumError::NonFinite);
    }
    let numeric = numeric_gradient(f, point, eps)?;
    Ok(analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max))
}
