//! Adaptive Simpson quadrature and axis-aligned path integration.

use crate::error::{Error, Result};

/// Default absolute tolerance per integrated segment.
pub const DEFAULT_SEGMENT_TOL: f64 = 1e-8;

/// Maximum bisection depth of the adaptive rule.
const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F>(f: &mut F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let c = 0.5 * (a + b);
    let fc = f(c)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb);
    simpson_step(f, a, b, fa, fc, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F>(
    f: &mut F,
    a: f64,
    b: f64,
    fa: f64,
    fc: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let c = 0.5 * (a + b);
    let d = 0.5 * (a + c);
    let e = 0.5 * (c + b);
    let fd = f(d)?;
    let fe = f(e)?;
    let left = (c - a) / 6.0 * (fa + 4.0 * fd + fc);
    let right = (b - c) / 6.0 * (fc + 4.0 * fe + fb);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::NoConvergence(format!(
            "adaptive Simpson on [{a}, {b}] exceeded depth {MAX_DEPTH}"
        )));
    }
    Ok(
        simpson_step(f, a, c, fa, fd, fc, left, 0.5 * tol, depth - 1)?
            + simpson_step(f, c, b, fc, fe, fb, right, 0.5 * tol, depth - 1)?,
    )
}

/// Integrates a gradient field along the axis-aligned path from `origin` to `target`.
///
/// The path moves one coordinate at a time in `order`. `df(axis, point)` returns the
/// partial derivative along `axis`, or `None` where it cannot be evaluated. When
/// `breaks` is supplied, each segment is split at the breakpoints of its axis.
pub fn path_integrate<F>(
    df: F,
    origin: &[f64],
    target: &[f64],
    order: &[usize],
    tol: f64,
    breaks: Option<&[Vec<f64>]>,
) -> Result<f64>
where
    F: Fn(usize, &[f64]) -> Option<f64>,
{
    if origin.len() != target.len() {
        return Err(Error::InvalidStructure(
            "origin and target dimensions differ".into(),
        ));
    }
    let mut point = origin.to_vec();
    let mut total = 0.0;
    for &axis in order {
        let (a, b) = (point[axis], target[axis]);
        if a != b {
            let mut knots = vec![a];
            if let Some(br) = breaks {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let mut inner: Vec<f64> = br[axis]
                    .iter()
                    .copied()
                    .filter(|&x| x > lo && x < hi)
                    .collect();
                if a > b {
                    inner.reverse();
                }
                knots.extend(inner);
            }
            knots.push(b);
            for w in knots.windows(2) {
                let mut eval = |s: f64| -> Result<f64> {
                    let mut p = point.clone();
                    p[axis] = s;
                    df(axis, &p).filter(|v| v.is_finite()).ok_or_else(|| {
                        Error::OutsideSupport(format!("derivative along axis {axis} at {p:?}"))
                    })
                };
                total += adaptive_simpson(&mut eval, w[0], w[1], tol)?;
            }
        }
        point[axis] = b;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_polynomial_exact() {
        let mut f = |x: f64| Ok(3.0 * x * x - 2.0 * x + 1.0);
        let v = adaptive_simpson(&mut f, -1.0, 2.0, 1e-12).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
    }

    #[test]
    fn simpson_smooth() {
        let mut f = |x: f64| Ok(x.sin());
        let v = adaptive_simpson(&mut f, 0.0, std::f64::consts::PI, 1e-10).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
    }

    #[test]
    fn reversed_interval_negates() {
        let mut f = |x: f64| Ok(x.exp());
        let a = adaptive_simpson(&mut f, 0.0, 1.0, 1e-10).unwrap();
        let b = adaptive_simpson(&mut f, 1.0, 0.0, 1e-10).unwrap();
        assert!((a + b).abs() < 1e-12);
    }

    #[test]
    fn zero_field() {
        let v = path_integrate(
            |_, _| Some(0.0),
            &[0.0, 0.0],
            &[1.0, 2.0],
            &[0, 1],
            1e-8,
            None,
        )
        .unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn failure_propagates() {
        let r = path_integrate(
            |_, p: &[f64]| (p[0] < 0.5).then_some(1.0),
            &[0.0],
            &[1.0],
            &[0],
            1e-8,
            None,
        );
        assert!(matches!(r, Err(Error::OutsideSupport(_))));
    }
}
