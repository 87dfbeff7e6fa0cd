//! Adaptive Simpson quadrature.
//!
//! The quasipotential enters probability estimates through exponents of the
//! form exp(-S/eps), so it must be resolved to well below eps * 1e-3. The
//! default absolute tolerance is 1e-10 with up to 60 refinement levels.

use crate::error::{Error, Result};

pub const DEFAULT_ABS_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_DEPTH: u32 = 60;

/// Integrate `f` over `[a, b]` (orientation-aware: `a > b` flips the sign)
/// with the classic adaptive Simpson rule and Richardson extrapolation.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    max_depth: u32,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let fa = f(lo);
    let fb = f(hi);
    let m = 0.5 * (lo + hi);
    let fm = f(m);
    let whole = simpson(lo, hi, fa, fm, fb);
    let mut converged = true;
    let v = recurse(
        &f,
        lo,
        hi,
        fa,
        fm,
        fb,
        whole,
        abs_tol,
        max_depth,
        &mut converged,
    );
    if converged {
        Ok(sign * v)
    } else {
        Err(Error::QuadratureFailure {
            a,
            b,
            tol: abs_tol,
        })
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
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
    converged: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // The factor 15 comes from Richardson extrapolation of the composite rule.
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 {
        *converged = false;
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, converged)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, converged)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = adaptive_simpson(|x| 3.0 * x * x, 0.0, 2.0, 1e-12, 40).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn orientation_flips_sign() {
        let fwd = adaptive_simpson(|x| x.exp(), 0.0, 1.0, 1e-12, 40).unwrap();
        let bwd = adaptive_simpson(|x| x.exp(), 1.0, 0.0, 1e-12, 40).unwrap();
        assert!((fwd + bwd).abs() < 1e-14);
        assert!((fwd - (1.0f64.exp() - 1.0)).abs() < 1e-11);
    }

    #[test]
    fn oscillatory_integrand_meets_tolerance() {
        let v = adaptive_simpson(|x| (20.0 * x).sin(), 0.0, 3.0, 1e-10, 60).unwrap();
        let exact = (1.0 - (60.0f64).cos()) / 20.0;
        assert!((v - exact).abs() < 1e-9);
    }

    #[test]
    fn empty_interval_is_zero() {
        assert_eq!(adaptive_simpson(|x| x, 1.5, 1.5, 1e-10, 60).unwrap(), 0.0);
    }
}
