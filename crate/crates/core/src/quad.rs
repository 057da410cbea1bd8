//! Adaptive Simpson quadrature.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not reach tolerance {tol:e} on [{a}, {b}] (estimate {estimate})")]
    NoConvergence {
        a: f64,
        b: f64,
        tol: f64,
        estimate: f64,
    },
}

const MAX_DEPTH: u32 = 50;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, QuadError> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut ok = true;
    let est = refine(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH, &mut ok);
    if ok {
        Ok(est)
    } else {
        Err(QuadError::NoConvergence {
            a,
            b,
            tol,
            estimate: est,
        })
    }
}

/// Integrates over consecutive pieces `[breaks[i], breaks[i+1]]`, splitting
/// the tolerance evenly. Useful when the integrand has known kinks.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    tol: f64,
) -> Result<f64, QuadError> {
    let pieces = breaks.len().saturating_sub(1).max(1) as f64;
    breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| integrate(&f, w[0], w[1], tol / pieces))
        .sum()
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    ok: &mut bool,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    if depth == 0 || !delta.is_finite() {
        *ok = false;
        return left + right + delta / 15.0;
    }
    refine(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, ok)
        + refine(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let v = integrate(|x| x * x, 0.0, 3.0, 1e-10).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn kinked_integrand() {
        let v = integrate_pieces(|x: f64| (-x.abs()).exp(), &[-30.0, 0.0, 30.0], 1e-9).unwrap();
        assert!((v - 2.0).abs() < 1e-8);
    }

    #[test]
    fn nonconvergence_reported() {
        let r = integrate(|x: f64| if x > 0.3 { f64::NAN } else { 0.0 }, 0.0, 1.0, 1e-6);
        assert!(r.is_err());
    }
}
