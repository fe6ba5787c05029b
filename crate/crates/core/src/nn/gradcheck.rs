//! Central finite-difference gradient verification.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates left out because `x +- h` crossed a non-differentiable
    /// point (a ReLU or clamp switched sides), where central differences
    /// do not estimate the derivative at `x`.
    pub skipped_kinks: usize,
    /// Largest relative error among coordinates with
    /// `max(|a|, |n|) >= SIGNIFICANT_GRADIENT`. Diagnostic only.
    #[serde(default)]
    pub max_rel_error_significant: f64,
}

/// Gradient magnitude above which f64 rounding in the loss cannot dominate
/// a central difference with `h = 1e-5`.
pub const SIGNIFICANT_GRADIENT: f64 = 1e-6;

impl GradCheckReport {
    pub fn empty() -> Self {
        GradCheckReport {
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            checked: 0,
            skipped_kinks: 0,
            max_rel_error_significant: 0.0,
        }
    }

    pub(crate) fn record_magnitude(&mut self, analytic: f64, numeric: f64, err: f64) {
        if analytic.abs().max(numeric.abs()) >= SIGNIFICANT_GRADIENT {
            self.max_rel_error_significant = self.max_rel_error_significant.max(err);
        }
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` against `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate `i` of `x`. `x` is restored before returning.
pub fn grad_check<F>(mut f: F, x: &mut [f64], analytic: &[f64], h: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(x.len(), analytic.len());
    let mut report = GradCheckReport::empty();
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(x);
        x[i] = orig - h;
        let minus = f(x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.record_magnitude(analytic[i], numeric, err);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report
}

/// Numeric gradient only (used by test oracles).
pub fn numeric_gradient<F>(mut f: F, x: &mut [f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let plus = f(x);
            x[i] = orig - h;
            let minus = f(x);
            x[i] = orig;
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let mut x = [3.0];
        let r = grad_check(|v| v[0] * v[0], &mut x, &[6.0], 1e-5);
        assert!(r.max_rel_error < 1e-9);
        assert_eq!(x, [3.0]);
    }

    #[test]
    fn linear_function_is_exact_to_rounding() {
        let coeffs = [2.0, -0.5, 1.25];
        let mut x = [0.1, 0.2, -0.3];
        let r = grad_check(
            |v| v.iter().zip(&coeffs).map(|(a, b)| a * b).sum(),
            &mut x,
            &coeffs,
            1e-5,
        );
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }
}
