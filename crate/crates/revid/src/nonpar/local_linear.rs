//! Local-linear kernel regression.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nonpar::grid::GridFn;

/// Bandwidth inflation applied when a local design is singular.
const WIDEN_FACTOR: f64 = 1.5;
/// Number of widening attempts before giving up.
const WIDEN_STEPS: usize = 3;
/// Product kernel weights below this are treated as zero.
const KERNEL_CUTOFF: f64 = 1e-14;

/// Local-linear estimate at one query point.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFit {
    /// Estimated conditional mean.
    pub level: f64,
    /// Estimated gradient of the conditional mean.
    pub slopes: Vec<f64>,
    /// Kish effective sample size of the kernel weights.
    pub ess: f64,
}

/// Conditional-mean grid together with diagnostics.
#[derive(Debug, Clone)]
pub struct CondMean {
    pub grid: GridFn,
    /// Nodes that needed a widened bandwidth.
    pub widened: usize,
    pub bandwidth: Vec<f64>,
}

/// Accumulates the weighted normal equations of y on [1, x − x0].
struct Normal {
    p: usize,
    gram: Vec<f64>,
    rhs: Vec<f64>,
    sw: f64,
    sw2: f64,
}

impl Normal {
    fn new(p: usize) -> Self {
        Self {
            p,
            gram: vec![0.0; p * p],
            rhs: vec![0.0; p],
            sw: 0.0,
            sw2: 0.0,
        }
    }

    #[inline]
    fn add(&mut self, w: f64, z: &[f64], y: f64) {
        let p = self.p;
        self.sw += w;
        self.sw2 += w * w;
        for a in 0..p {
            let wa = w * z[a];
            self.rhs[a] += wa * y;
            for b in a..p {
                self.gram[a * p + b] += wa * z[b];
            }
        }
    }

    fn solve(&self) -> Option<LocalFit> {
        let p = self.p;
        let ess = if self.sw2 > 0.0 {
            self.sw * self.sw / self.sw2
        } else {
            0.0
        };
        if ess < (p + 1) as f64 {
            return None;
        }
        let g = DMatrix::from_fn(p, p, |a, b| {
            let (i, j) = if a <= b { (a, b) } else { (b, a) };
            self.gram[i * p + j]
        });
        let chol = g.clone().cholesky()?;
        let l = chol.l();
        let diag: Vec<f64> = (0..p).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(min > 1e-13 * max) {
            return None;
        }
        let beta = chol.solve(&DVector::from_column_slice(&self.rhs));
        Some(LocalFit {
            level: beta[0],
            slopes: beta.iter().skip(1).copied().collect(),
            ess,
        })
    }
}

/// Local-linear fit at `x0` with Gaussian product weights and bandwidths `h`.
pub fn fit_at(x: &[&[f64]], y: &[f64], h: &[f64], x0: &[f64]) -> Option<LocalFit> {
    let d = x.len();
    let mut ne = Normal::new(d + 1);
    let mut z = vec![1.0; d + 1];
    for i in 0..y.len() {
        let mut s = 0.0;
        for j in 0..d {
            let dx = x[j][i] - x0[j];
            z[j + 1] = dx;
            let u = dx / h[j];
            s += u * u;
        }
        let w = (-0.5 * s).exp();
        if w > 0.0 {
            ne.add(w, &z, y[i]);
        }
    }
    ne.solve()
}

/// Local-linear estimate of E[y | x] on the tensor grid `axes`; slopes are cached as
/// derivative tensors.
pub fn cond_mean(
    y: &[f64],
    x: &[&[f64]],
    names: &[&str],
    axes: Vec<Vec<f64>>,
    bw: &[f64],
) -> Result<GridFn> {
    cond_mean_report(y, x, names, axes, bw).map(|c| c.grid)
}

/// As [`cond_mean`], also reporting how many nodes required bandwidth widening.
pub fn cond_mean_report(
    y: &[f64],
    x: &[&[f64]],
    names: &[&str],
    axes: Vec<Vec<f64>>,
    bw: &[f64],
) -> Result<CondMean> {
    let d = x.len();
    if axes.len() != d || bw.len() != d || names.len() != d {
        return Err(Error::InvalidStructure(
            "regressor, axis and bandwidth counts differ".into(),
        ));
    }
    if x.iter().any(|c| c.len() != y.len()) {
        return Err(Error::InvalidStructure("regressor length mismatch".into()));
    }
    if bw.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::InvalidStructure(
            "bandwidths must be positive".into(),
        ));
    }
    let n = y.len();
    let factors: Vec<Vec<Vec<f64>>> = (0..d)
        .map(|a| {
            axes[a]
                .par_iter()
                .map(|&g| {
                    x[a].iter()
                        .map(|&v| {
                            let u = (v - g) / bw[a];
                            (-0.5 * u * u).exp()
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let template = GridFn::new_partial(
        names.iter().map(|s| s.to_string()).collect(),
        axes.clone(),
        vec![0.0; axes.iter().map(Vec::len).product()],
    )?;
    let fits: Vec<Result<(LocalFit, bool)>> = (0..template.len())
        .into_par_iter()
        .map(|flat| {
            let idx = template.unflat(flat);
            let x0: Vec<f64> = idx.iter().enumerate().map(|(a, &i)| axes[a][i]).collect();
            let mut ne = Normal::new(d + 1);
            let mut z = vec![1.0; d + 1];
            for i in 0..n {
                let mut w = 1.0;
                for a in 0..d {
                    w *= factors[a][idx[a]][i];
                }
                if w > KERNEL_CUTOFF {
                    for a in 0..d {
                        z[a + 1] = x[a][i] - x0[a];
                    }
                    ne.add(w, &z, y[i]);
                }
            }
            if let Some(fit) = ne.solve() {
                return Ok((fit, false));
            }
            let mut h = bw.to_vec();
            for _ in 0..WIDEN_STEPS {
                h.iter_mut().for_each(|v| *v *= WIDEN_FACTOR);
                if let Some(fit) = fit_at(x, y, &h, &x0) {
                    return Ok((fit, true));
                }
            }
            Err(Error::Singular(format!("{x0:?}")))
        })
        .collect();
    let mut values = Vec::with_capacity(fits.len());
    let mut derivs = vec![Vec::with_capacity(fits.len()); d];
    let mut widened = 0;
    for f in fits {
        let (fit, w) = f?;
        widened += w as usize;
        values.push(fit.level);
        for a in 0..d {
            derivs[a].push(fit.slopes[a]);
        }
    }
    let grid = GridFn::new(template.names.clone(), axes, values)?.with_derivs(derivs)?;
    Ok(CondMean {
        grid,
        widened,
        bandwidth: bw.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn design(n: usize) -> (Vec<f64>, Vec<f64>) {
        let a: Vec<f64> = (0..n)
            .map(|i| ((i * 7919) % 1000) as f64 / 1000.0)
            .collect();
        let b: Vec<f64> = (0..n)
            .map(|i| ((i * 104_729) % 997) as f64 / 997.0)
            .collect();
        (a, b)
    }

    #[test]
    fn constant_response() {
        let (a, b) = design(400);
        let y = vec![2.5; 400];
        let g = cond_mean(
            &y,
            &[&a, &b],
            &["a", "b"],
            vec![vec![0.2, 0.5, 0.8]; 2],
            &[0.1, 0.1],
        )
        .unwrap();
        assert!(g.values.iter().all(|v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn affine_response_exact() {
        let (a, b) = design(400);
        let y: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(u, v)| 1.0 + 2.0 * u - 3.0 * v)
            .collect();
        let g = cond_mean(
            &y,
            &[&a, &b],
            &["a", "b"],
            vec![vec![0.2, 0.5, 0.8]; 2],
            &[0.05, 0.3],
        )
        .unwrap();
        for flat in 0..g.len() {
            let p = g.node(flat);
            assert!((g.values[flat] - (1.0 + 2.0 * p[0] - 3.0 * p[1])).abs() < 1e-8);
            assert!((g.derivs.as_ref().unwrap()[0][flat] - 2.0).abs() < 1e-8);
        }
    }

    #[test]
    fn singular_design_widens() {
        let a: Vec<f64> = (0..200).map(|i| if i < 100 { 0.0 } else { 1.0 }).collect();
        let y = a.clone();
        let c = cond_mean_report(&y, &[&a], &["a"], vec![vec![0.5, 0.5001]], &[0.01]).unwrap();
        assert_eq!(c.widened, 2);
        assert!((c.grid.values[0] - 0.5).abs() < 1e-6);
        assert!((c.grid.values[1] - 0.5001).abs() < 1e-6);
    }
}
