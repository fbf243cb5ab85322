//! Central finite-difference oracle for validating analytic gradients.
//!
//! Every gradient shipped by this crate is checked against [`finite_diff`]
//! in tests and through the `gradcheck` CLI subcommand. The checker stays
//! deliberately independent of the analytic paths: it only ever evaluates
//! the scalar function forward.

use crate::{Error, Result};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradientReport {
    /// Largest relative error over all compared coordinates.
    pub max_relative_error: f64,
    /// Coordinate index where the largest error occurred.
    pub worst_index: usize,
    /// True iff `max_relative_error < rtol`.
    pub passed: bool,
    /// Step size used for the central differences.
    pub step_size: f64,
    /// Relative tolerance the report was evaluated against.
    pub rtol: f64,
    /// Absolute allowance below which coordinate differences are treated as
    /// finite-difference roundoff rather than gradient errors.
    pub atol: f64,
}

/// Denominator floor for the relative error, guarding near-zero gradients.
const REL_ERR_FLOOR: f64 = 1e-12;

/// Coordinates where both gradients are below this magnitude are skipped.
const SKIP_MAGNITUDE: f64 = 1e-10;

/// Central-difference gradient of a scalar function.
///
/// Computes `(f(x + h e_i) - f(x - h e_i)) / (2 h)` per coordinate. A
/// non-finite function value aborts with the offending coordinate.
pub fn finite_diff<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(h > 0.0, "step size must be positive");
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = probe[i];
        probe[i] = original + h;
        let plus = f(&probe);
        probe[i] = original - h;
        let minus = f(&probe);
        probe[i] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteEval { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Compare an analytic gradient against central differences of `f` at `x`.
///
/// Per coordinate the relative error is
/// `|g_a - g_n| / max(1e-12, |g_a| + |g_n|)`; coordinates where both
/// magnitudes are below 1e-10 are skipped, and coordinates whose absolute
/// difference is at most `atol` are treated as matching. Central
/// differences in double precision cannot resolve differences much below
/// `eps * |f| / h`, so `atol` should sit at that roundoff scale (or at zero
/// when the gradients are known to be well above it).
pub fn check<F>(
    f: F,
    analytic: &[f64],
    x: &[f64],
    h: f64,
    rtol: f64,
    atol: f64,
) -> Result<GradientReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if analytic.len() != x.len() {
        return Err(Error::ShapeMismatch {
            context: "gradcheck",
            expected: format!("{} gradient entries", x.len()),
            found: format!("{}", analytic.len()),
        });
    }
    let numeric = finite_diff(f, x, h)?;
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for (i, (&ga, &gn)) in analytic.iter().zip(numeric.iter()).enumerate() {
        if ga.abs() < SKIP_MAGNITUDE && gn.abs() < SKIP_MAGNITUDE {
            continue;
        }
        if (ga - gn).abs() <= atol {
            continue;
        }
        let rel = (ga - gn).abs() / REL_ERR_FLOOR.max(ga.abs() + gn.abs());
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradientReport {
        max_relative_error: max_rel,
        worst_index: worst,
        passed: max_rel < rtol,
        step_size: h,
        rtol,
        atol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_function_has_zero_gradient() {
        let g = finite_diff(|_| 3.25, &[0.5, -1.0, 2.0], 1e-6).unwrap();
        assert_eq!(g, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_function_is_recovered() {
        let a = [1.5, -2.0, 0.25];
        let f = |x: &[f64]| a.iter().zip(x).map(|(ai, xi)| ai * xi).sum::<f64>();
        let g = finite_diff(f, &[0.3, 0.7, -0.2], 1e-6).unwrap();
        for (gi, ai) in g.iter().zip(a.iter()) {
            assert_abs_diff_eq!(gi, ai, epsilon = 1e-9);
        }
    }

    #[test]
    fn squared_norm_gradient() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let g = finite_diff(f, &[1.0, 2.0], 1e-6).unwrap();
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g[1], 4.0, epsilon = 1e-9);
    }

    #[test]
    fn non_finite_evaluation_names_the_coordinate() {
        let f = |x: &[f64]| if x[1] > 0.5 { f64::NAN } else { x[0] };
        let err = finite_diff(f, &[0.0, 0.5], 1e-3).unwrap_err();
        match err {
            Error::NonFiniteEval { coordinate } => assert_eq!(coordinate, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn check_accepts_its_own_numeric_gradient() {
        let f = |x: &[f64]| (x[0] * x[1]).sin() + x[0];
        let x = [0.4, -0.9];
        let numeric = finite_diff(f, &x, 1e-6).unwrap();
        let report = check(f, &numeric, &x, 1e-6, 1e-5, 0.0).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn check_rejects_a_sign_flip() {
        let f = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        let x = [1.0, -2.0];
        let mut analytic = vec![2.0, -4.0];
        analytic[1] = -analytic[1];
        let report = check(f, &analytic, &x, 1e-6, 1e-5, 0.0).unwrap();
        assert!(!report.passed);
        assert_eq!(report.worst_index, 1);
    }

    #[test]
    fn near_zero_coordinates_are_skipped() {
        // Analytic carries noise below the skip threshold where the true
        // gradient vanishes; the check must still pass.
        let f = |x: &[f64]| x[0] * x[0];
        let analytic = [2.0, 5e-11];
        let report = check(f, &analytic, &[1.0, 3.0], 1e-6, 1e-5, 0.0).unwrap();
        assert!(report.passed);
    }

    #[test]
    fn mismatched_shapes_error() {
        let f = |x: &[f64]| x[0];
        assert!(check(f, &[1.0, 2.0], &[0.0], 1e-6, 1e-5, 0.0).is_err());
    }
}
