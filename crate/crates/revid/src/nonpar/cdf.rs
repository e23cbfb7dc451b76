//! Smoothed conditional distribution function of a scalar given a covariate vector.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::nonpar::kernel::{norm_cdf, norm_pdf};

/// Default minimum effective local sample size.
pub const DEFAULT_MIN_ESS: f64 = 10.0;

/// Component selector for CDF derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CdfAxis {
    /// The response argument.
    M,
    /// A conditioning component by index.
    V(usize),
}

/// Kernel estimator of P(m ≤ m0 | v = v0) with an integrated Gaussian kernel in m and a
/// Gaussian product kernel in v.
#[derive(Debug, Clone)]
pub struct CondCdf {
    pub m: Vec<f64>,
    /// Conditioning columns.
    pub v: Vec<Vec<f64>>,
    pub names: Vec<String>,
    pub h_m: f64,
    pub h_v: Vec<f64>,
    /// Effective local sample size below which evaluation fails.
    pub min_ess: f64,
}

/// Value and analytic gradient of the smoothed CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfGradient {
    pub value: f64,
    pub dm: f64,
    pub dv: Vec<f64>,
}

/// Local derivative estimates at one response value.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDeriv {
    pub m: f64,
    /// Kernel conditional density, the derivative in m.
    pub density: f64,
    /// Local-linear CDF level.
    pub level: f64,
    /// Local-linear slopes in each conditioning component.
    pub slopes: Vec<f64>,
    /// Heteroskedasticity-robust standard errors of the slopes, when requested.
    pub se: Option<Vec<f64>>,
    pub ess: f64,
}

impl CondCdf {
    pub fn new(
        m: Vec<f64>,
        v: Vec<Vec<f64>>,
        names: Vec<String>,
        h_m: f64,
        h_v: Vec<f64>,
    ) -> Result<Self> {
        if v.len() != h_v.len() || names.len() != v.len() {
            return Err(Error::InvalidStructure(
                "one bandwidth and name per component".into(),
            ));
        }
        if v.iter().any(|c| c.len() != m.len()) {
            return Err(Error::InvalidStructure(
                "conditioning column length mismatch".into(),
            ));
        }
        if !(h_m > 0.0) || h_v.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidStructure(
                "bandwidths must be positive".into(),
            ));
        }
        Ok(Self {
            m,
            v,
            names,
            h_m,
            h_v,
            min_ess: DEFAULT_MIN_ESS,
        })
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// Kernel weights at `v0`, their sum and effective sample size.
    fn weights(&self, v0: &[f64]) -> Result<(Vec<f64>, f64)> {
        let d = self.dim();
        let mut w = vec![0.0; self.len()];
        let (mut sw, mut sw2) = (0.0, 0.0);
        for (i, wi) in w.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in 0..d {
                let u = (self.v[j][i] - v0[j]) / self.h_v[j];
                s += u * u;
            }
            *wi = (-0.5 * s).exp();
            sw += *wi;
            sw2 += *wi * *wi;
        }
        let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
        if ess < self.min_ess {
            return Err(Error::TooFewRows {
                got: ess as usize,
                needed: self.min_ess as usize,
                context: format!("effective local sample at {v0:?}"),
            });
        }
        Ok((w, sw))
    }

    /// Smoothed CDF at (m0, v0).
    pub fn cdf(&self, m0: f64, v0: &[f64]) -> Result<f64> {
        let (w, sw) = self.weights(v0)?;
        let s: f64 = w
            .iter()
            .zip(&self.m)
            .map(|(wi, mi)| wi * norm_cdf((m0 - mi) / self.h_m))
            .sum();
        Ok(s / sw)
    }

    /// Smoothed CDF and its exact partial derivatives at (m0, v0).
    pub fn gradient(&self, m0: f64, v0: &[f64]) -> Result<CdfGradient> {
        let d = self.dim();
        let (w, sw) = self.weights(v0)?;
        let mut value = 0.0;
        let mut dm = 0.0;
        let cdfs: Vec<f64> = self
            .m
            .iter()
            .map(|mi| norm_cdf((m0 - mi) / self.h_m))
            .collect();
        for i in 0..self.len() {
            value += w[i] * cdfs[i];
            dm += w[i] * norm_pdf((m0 - self.m[i]) / self.h_m);
        }
        value /= sw;
        dm /= sw * self.h_m;
        let mut dv = vec![0.0; d];
        for i in 0..self.len() {
            let centered = w[i] * (cdfs[i] - value);
            for j in 0..d {
                let h = self.h_v[j];
                dv[j] += centered * (self.v[j][i] - v0[j]) / (h * h);
            }
        }
        dv.iter_mut().for_each(|x| *x /= sw);
        Ok(CdfGradient { value, dm, dv })
    }

    /// One analytic partial derivative of the smoothed CDF.
    pub fn deriv(&self, m0: f64, v0: &[f64], axis: CdfAxis) -> Result<f64> {
        let g = self.gradient(m0, v0)?;
        match axis {
            CdfAxis::M => Ok(g.dm),
            CdfAxis::V(j) => g.dv.get(j).copied().ok_or_else(|| {
                Error::InvalidStructure(format!("conditioning component {j} out of range"))
            }),
        }
    }

    /// Precomputes kernel terms for a fixed set of response values.
    pub fn prepare(&self, m_grid: &[f64]) -> PreparedCdf<'_> {
        let ng = m_grid.len();
        let mut cdfs = vec![0.0; self.len() * ng];
        let mut pdfs = vec![0.0; self.len() * ng];
        for i in 0..self.len() {
            for (g, &mg) in m_grid.iter().enumerate() {
                let u = (mg - self.m[i]) / self.h_m;
                cdfs[i * ng + g] = norm_cdf(u);
                pdfs[i * ng + g] = norm_pdf(u) / self.h_m;
            }
        }
        PreparedCdf {
            cdf: self,
            m_grid: m_grid.to_vec(),
            cdfs,
            pdfs,
        }
    }
}

/// Conditional CDF with kernel terms cached for a fixed response grid.
#[derive(Debug)]
pub struct PreparedCdf<'a> {
    cdf: &'a CondCdf,
    pub m_grid: Vec<f64>,
    cdfs: Vec<f64>,
    pdfs: Vec<f64>,
}

impl PreparedCdf<'_> {
    /// Local-linear CDF slopes and kernel density at every response value for one `v0`.
    pub fn fit(&self, v0: &[f64], with_se: bool) -> Result<Vec<LocalDeriv>> {
        let c = self.cdf;
        let d = c.dim();
        let p = d + 1;
        let ng = self.m_grid.len();
        let (w, sw) = c.weights(v0)?;
        let sw2: f64 = w.iter().map(|x| x * x).sum();
        let ess = sw * sw / sw2;
        let mut gram = vec![0.0; p * p];
        let mut rhs = vec![0.0; p * ng];
        let mut dens = vec![0.0; ng];
        let mut z = vec![1.0; p];
        for i in 0..c.len() {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..d {
                z[j + 1] = c.v[j][i] - v0[j];
            }
            for a in 0..p {
                let wa = wi * z[a];
                for b in a..p {
                    gram[a * p + b] += wa * z[b];
                }
            }
            let row = &self.cdfs[i * ng..(i + 1) * ng];
            let prow = &self.pdfs[i * ng..(i + 1) * ng];
            for g in 0..ng {
                let wg = wi * row[g];
                let r = &mut rhs[g * p..(g + 1) * p];
                for a in 0..p {
                    r[a] += wg * z[a];
                }
                dens[g] += wi * prow[g];
            }
        }
        let gm = DMatrix::from_fn(p, p, |a, b| {
            let (i, j) = if a <= b { (a, b) } else { (b, a) };
            gram[i * p + j]
        });
        let chol = gm
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular(format!("conditional CDF design at {v0:?}")))?;
        let rhs_m = DMatrix::from_column_slice(p, ng, &rhs);
        let beta = chol.solve(&rhs_m);
        let se = if with_se {
            Some(self.sandwich(&w, v0, &beta, &chol.inverse()))
        } else {
            None
        };
        Ok((0..ng)
            .map(|g| LocalDeriv {
                m: self.m_grid[g],
                density: dens[g] / sw,
                level: beta[(0, g)],
                slopes: (1..p).map(|a| beta[(a, g)]).collect(),
                se: se.as_ref().map(|s| s[g].clone()),
                ess,
            })
            .collect())
    }

    fn sandwich(
        &self,
        w: &[f64],
        v0: &[f64],
        beta: &DMatrix<f64>,
        bread: &DMatrix<f64>,
    ) -> Vec<Vec<f64>> {
        let c = self.cdf;
        let d = c.dim();
        let p = d + 1;
        let ng = self.m_grid.len();
        let mut acc = vec![0.0; ng * d];
        let mut z = DVector::<f64>::from_element(p, 1.0);
        for i in 0..c.len() {
            let wi = w[i];
            if wi == 0.0 {
                continue;
            }
            for j in 0..d {
                z[j + 1] = c.v[j][i] - v0[j];
            }
            let u = bread * &z;
            for g in 0..ng {
                let fitted: f64 = (0..p).map(|a| beta[(a, g)] * z[a]).sum();
                let e = self.cdfs[i * ng + g] - fitted;
                let s = wi * wi * e * e;
                let row = &mut acc[g * d..(g + 1) * d];
                for j in 0..d {
                    row[j] += s * u[j + 1] * u[j + 1];
                }
            }
        }
        acc.chunks(d)
            .map(|row| row.iter().map(|v| v.max(0.0).sqrt()).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn sample(n: usize) -> CondCdf {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let v1: Vec<f64> = (0..n).map(|_| draw()).collect();
        let v2: Vec<f64> = (0..n).map(|_| draw()).collect();
        let m: Vec<f64> = (0..n)
            .map(|i| 0.5 * v1[i] - 0.3 * v2[i] + 0.4 * draw())
            .collect();
        CondCdf::new(
            m,
            vec![v1, v2],
            vec!["a".into(), "b".into()],
            0.2,
            vec![0.4, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn monotone_and_bounded() {
        let c = sample(2000);
        let mut prev = -1.0;
        for j in 0..41 {
            let m0 = -3.0 + 0.15 * j as f64;
            let f = c.cdf(m0, &[0.2, -0.1]).unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev);
            prev = f;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = sample(2000);
        let (m0, v0) = (0.1, [0.3, -0.2]);
        let g = c.gradient(m0, &v0).unwrap();
        let step = 1e-4;
        let fd_m = (c.cdf(m0 + step, &v0).unwrap() - c.cdf(m0 - step, &v0).unwrap()) / (2.0 * step);
        assert!((fd_m - g.dm).abs() <= 1e-6 * g.dm.abs().max(1.0));
        for j in 0..2 {
            let mut up = v0;
            let mut dn = v0;
            up[j] += step;
            dn[j] -= step;
            let fd = (c.cdf(m0, &up).unwrap() - c.cdf(m0, &dn).unwrap()) / (2.0 * step);
            assert!((fd - g.dv[j]).abs() <= 1e-6 * g.dv[j].abs().max(1.0));
        }
        assert!(g.dm > 0.0);
    }

    #[test]
    fn local_slopes_track_index_ratio() {
        let c = sample(20000);
        let prep = c.prepare(&[-0.2, 0.0, 0.2]);
        let fits = prep.fit(&[0.0, 0.0], true).unwrap();
        for f in &fits {
            let ratio = f.slopes[1] / f.slopes[0];
            assert!((ratio + 0.6).abs() < 0.1, "ratio {ratio}");
            assert!(f.se.as_ref().unwrap().iter().all(|s| *s > 0.0));
        }
    }

    #[test]
    fn sparse_region_errors() {
        let mut c = sample(200);
        c.min_ess = 50.0;
        assert!(c.cdf(0.0, &[8.0, 8.0]).is_err());
    }
}
