//! Bracketed scalar root finding for monotone functions.

use crate::error::{Error, Result};

/// Maximum iterations of the hybrid solver.
pub const MAX_ITER: usize = 200;

/// Expands `[lo, hi]` geometrically until `f` changes sign, up to `max_doublings` times.
pub fn expand_bracket<F: FnMut(f64) -> f64>(
    f: &mut F,
    mut lo: f64,
    mut hi: f64,
    max_doublings: usize,
) -> Result<(f64, f64)> {
    let mut flo = f(lo);
    let mut fhi = f(hi);
    for _ in 0..=max_doublings {
        if flo.signum() != fhi.signum() || flo == 0.0 || fhi == 0.0 {
            return Ok((lo, hi));
        }
        let width = hi - lo;
        if flo.abs() < fhi.abs() {
            lo -= width;
            flo = f(lo);
        } else {
            hi += width;
            fhi = f(hi);
        }
    }
    Err(Error::Bracket(format!(
        "no sign change within [{lo}, {hi}]"
    )))
}

/// Bisection safeguarded Newton iteration on a bracket with a sign change.
///
/// `f` returns the value and derivative. Stops when |f| ≤ `ftol` or the bracket
/// shrinks below `xtol`.
pub fn bisect_newton<F: FnMut(f64) -> (f64, f64)>(
    f: &mut F,
    lo: f64,
    hi: f64,
    ftol: f64,
    xtol: f64,
) -> Result<f64> {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let (fa, _) = f(a);
    let (fb, _) = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket(format!("f({a}) and f({b}) share a sign")));
    }
    let increasing = fb > 0.0;
    let mut x = 0.5 * (a + b);
    for _ in 0..MAX_ITER {
        let (fx, dfx) = f(x);
        if !fx.is_finite() {
            return Err(Error::NoConvergence(format!("non-finite value at {x}")));
        }
        if fx.abs() <= ftol {
            return Ok(x);
        }
        if (fx > 0.0) == increasing {
            b = x;
        } else {
            a = x;
        }
        if b - a <= xtol * (1.0 + x.abs()) {
            return Ok(x);
        }
        let newton = x - fx / dfx;
        x = if dfx != 0.0 && newton.is_finite() && newton > a && newton < b {
            newton
        } else {
            0.5 * (a + b)
        };
    }
    Err(Error::NoConvergence(format!(
        "bisect-newton after {MAX_ITER} iterations"
    )))
}

/// Pure bisection to an absolute bracket width `xtol`.
pub fn bisect<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64, xtol: f64) -> Result<f64> {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracket(format!("f({a}) and f({b}) share a sign")));
    }
    let increasing = fb > 0.0;
    for _ in 0..MAX_ITER {
        let c = 0.5 * (a + b);
        if b - a <= xtol || c == a || c == b {
            return Ok(c);
        }
        let fc = f(c);
        if fc == 0.0 {
            return Ok(c);
        }
        if (fc > 0.0) == increasing {
            b = c;
        } else {
            a = c;
        }
    }
    Ok(0.5 * (a + b))
}
