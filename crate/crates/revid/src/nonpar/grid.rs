//! Tensor-grid functions with multilinear interpolation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack used when testing whether a point lies on the grid hull.
const HULL_SLACK: f64 = 1e-12;

/// Real-valued function tabulated on a tensor grid.
///
/// Values are stored row-major with the last axis varying fastest. Nodes
/// holding NaN are unusable; interpolation touching them returns `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFn {
    /// Coordinate names, one per axis.
    pub names: Vec<String>,
    /// Strictly increasing breakpoints per axis.
    pub axes: Vec<Vec<f64>>,
    /// Function values at the nodes.
    pub values: Vec<f64>,
    /// Optional partial-derivative tensors, one per axis, on the same nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivs: Option<Vec<Vec<f64>>>,
}

impl GridFn {
    /// Creates a grid function; every value must be finite.
    pub fn new(names: Vec<String>, axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidStructure(format!(
                "grid value at node {i} is not finite"
            )));
        }
        Self::new_partial(names, axes, values)
    }

    /// Creates a grid function whose NaN nodes mark unusable points.
    pub fn new_partial(names: Vec<String>, axes: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if names.len() != axes.len() {
            return Err(Error::InvalidStructure("one name per axis required".into()));
        }
        for (a, ax) in axes.iter().enumerate() {
            if ax.len() < 2 {
                return Err(Error::InvalidStructure(format!(
                    "axis {a} needs at least 2 points"
                )));
            }
            if ax.windows(2).any(|w| !(w[1] > w[0])) || ax.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidStructure(format!(
                    "axis {a} not strictly increasing"
                )));
            }
        }
        let n: usize = axes.iter().map(Vec::len).product();
        if values.len() != n {
            return Err(Error::InvalidStructure(format!(
                "expected {n} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            names,
            axes,
            values,
            derivs: None,
        })
    }

    /// Tabulates `f` on the tensor product of `axes`.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(
        names: Vec<String>,
        axes: Vec<Vec<f64>>,
        f: F,
    ) -> Result<Self> {
        let n: usize = axes.iter().map(Vec::len).product();
        let mut g = Self::new_partial(names, axes, vec![0.0; n])?;
        for flat in 0..n {
            g.values[flat] = f(&g.node(flat));
        }
        Ok(g)
    }

    /// Attaches derivative tensors, one per axis.
    pub fn with_derivs(mut self, derivs: Vec<Vec<f64>>) -> Result<Self> {
        if derivs.len() != self.dim() || derivs.iter().any(|d| d.len() != self.values.len()) {
            return Err(Error::InvalidStructure(
                "derivative tensor shape mismatch".into(),
            ));
        }
        self.derivs = Some(derivs);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Axis lengths.
    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Vec::len).collect()
    }

    /// Flat index of a multi-index.
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (a, &i) in idx.iter().enumerate() {
            f = f * self.axes[a].len() + i;
        }
        f
    }

    /// Multi-index of a flat index.
    pub fn unflat(&self, mut flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.dim()];
        for a in (0..self.dim()).rev() {
            let n = self.axes[a].len();
            idx[a] = flat % n;
            flat /= n;
        }
        idx
    }

    /// Coordinates of the node with flat index `flat`.
    pub fn node(&self, flat: usize) -> Vec<f64> {
        self.unflat(flat)
            .iter()
            .enumerate()
            .map(|(a, &i)| self.axes[a][i])
            .collect()
    }

    /// Position of an exact breakpoint on an axis.
    pub fn axis_index(&self, axis: usize, x: f64) -> Option<usize> {
        self.axes[axis].iter().position(|&v| v == x)
    }

    /// Whether `x` lies inside the grid hull.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self.axes.iter().zip(x).all(|(ax, &v)| {
                let lo = ax[0];
                let hi = ax[ax.len() - 1];
                let slack = HULL_SLACK * (hi - lo);
                v >= lo - slack && v <= hi + slack
            })
    }

    /// Cell index and fractional position of `x` along one axis.
    fn locate(&self, axis: usize, x: f64) -> (usize, f64) {
        let ax = &self.axes[axis];
        let n = ax.len();
        let i = match ax.binary_search_by(|v| v.total_cmp(&x)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        let t = ((x - ax[i]) / (ax[i + 1] - ax[i])).clamp(0.0, 1.0);
        (i, t)
    }

    fn interp(&self, table: &[f64], x: &[f64]) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let d = self.dim();
        let cells: Vec<(usize, f64)> = (0..d).map(|a| self.locate(a, x[a])).collect();
        let mut acc = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                let up = (corner >> (d - 1 - a)) & 1 == 1;
                let (i, t) = cells[a];
                idx[a] = i + up as usize;
                w *= if up { t } else { 1.0 - t };
            }
            if w == 0.0 {
                continue;
            }
            let v = table[self.flat(&idx)];
            if !v.is_finite() {
                return None;
            }
            acc += w * v;
        }
        Some(acc)
    }

    /// Multilinear interpolation; `None` outside the hull or next to an unusable node.
    pub fn eval(&self, x: &[f64]) -> Option<f64> {
        self.interp(&self.values, x)
    }

    /// Partial derivative along `axis`: interpolated from the cached tensor when present,
    /// otherwise the slope of the multilinear interpolant.
    pub fn deriv(&self, x: &[f64], axis: usize) -> Option<f64> {
        match &self.derivs {
            Some(d) => self.interp(&d[axis], x),
            None => self.slope(x, axis),
        }
    }

    /// Slope of the multilinear interpolant along `axis`.
    pub fn slope(&self, x: &[f64], axis: usize) -> Option<f64> {
        if !self.contains(x) {
            return None;
        }
        let (i, _) = self.locate(axis, x[axis]);
        let ax = &self.axes[axis];
        let mut lo = x.to_vec();
        let mut hi = x.to_vec();
        lo[axis] = ax[i];
        hi[axis] = ax[i + 1];
        Some((self.eval(&hi)? - self.eval(&lo)?) / (ax[i + 1] - ax[i]))
    }

    /// Returns a new grid with `f` applied to every value.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> GridFn {
        GridFn {
            names: self.names.clone(),
            axes: self.axes.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            derivs: None,
        }
    }

    /// Multiplies values and cached derivatives by `c`.
    pub fn scaled(&self, c: f64) -> GridFn {
        GridFn {
            names: self.names.clone(),
            axes: self.axes.clone(),
            values: self.values.iter().map(|&v| c * v).collect(),
            derivs: self.derivs.as_ref().map(|d| {
                d.iter()
                    .map(|t| t.iter().map(|&v| c * v).collect())
                    .collect()
            }),
        }
    }

    /// Derivative tensor of one axis, if cached.
    pub fn deriv_table(&self, axis: usize) -> Option<&[f64]> {
        self.derivs.as_ref().map(|d| d[axis].as_slice())
    }

    /// Writes long-format CSV: one column per axis, then `value`, then cached derivatives.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = self.names.clone();
        header.push("value".into());
        if self.derivs.is_some() {
            header.extend(self.names.iter().map(|n| format!("d_{n}")));
        }
        out.write_record(&header)?;
        for flat in 0..self.len() {
            let mut row: Vec<String> = self.node(flat).iter().map(|v| format!("{v}")).collect();
            row.push(crate::panel::fmt_f64(self.values[flat]));
            if let Some(d) = &self.derivs {
                row.extend(d.iter().map(|t| crate::panel::fmt_f64(t[flat])));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 sample quantile.
pub fn quantile(data: &[f64], p: f64) -> f64 {
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    quantile_sorted(&s, p)
}

/// Sample median.
pub fn median(data: &[f64]) -> f64 {
    quantile(data, 0.5)
}

/// Quantile grid of `n` points at equally spaced probabilities in `[lo, hi]`,
/// with `inserts` placed exactly; inserted points outside the hull are ignored.
pub fn quantile_axis(
    data: &[f64],
    n: usize,
    lo: f64,
    hi: f64,
    inserts: &[f64],
) -> Result<Vec<f64>> {
    if data.is_empty() || n < 2 {
        return Err(Error::InvalidStructure(
            "quantile axis needs data and n >= 2".into(),
        ));
    }
    let mut s = data.to_vec();
    s.sort_by(f64::total_cmp);
    let mut ax: Vec<f64> = (0..n)
        .map(|j| quantile_sorted(&s, lo + (hi - lo) * j as f64 / (n - 1) as f64))
        .collect();
    ax.dedup();
    if ax.len() < 2 {
        return Err(Error::InvalidStructure(
            "quantile axis collapsed to a point".into(),
        ));
    }
    let (a, b) = (ax[0], ax[ax.len() - 1]);
    let tol = 1e-6 * (b - a);
    for &x in inserts {
        if x < a || x > b {
            continue;
        }
        match ax.iter().position(|&v| (v - x).abs() <= tol) {
            Some(i) => ax[i] = x,
            None => ax.push(x),
        }
    }
    ax.sort_by(f64::total_cmp);
    ax.dedup();
    Ok(ax)
}
