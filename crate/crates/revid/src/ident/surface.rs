//! Functions of (m, k, l) indexed by the demand shifter.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonpar::GridFn;
use crate::panel::fmt_f64;

/// One grid per discrete shifter level, or a single grid with z as a fourth axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    /// Shifter levels; empty when z is a grid axis.
    pub levels: Vec<f64>,
    pub grids: Vec<GridFn>,
}

impl Surface {
    pub fn discrete(levels: Vec<f64>, grids: Vec<GridFn>) -> Result<Self> {
        if levels.len() != grids.len() || levels.is_empty() {
            return Err(Error::InvalidStructure(
                "one grid per shifter level required".into(),
            ));
        }
        if grids.iter().any(|g| g.dim() != 3) {
            return Err(Error::InvalidStructure(
                "discrete-shifter grids must be 3-dimensional".into(),
            ));
        }
        Ok(Self { levels, grids })
    }

    pub fn continuous(grid: GridFn) -> Result<Self> {
        if grid.dim() != 4 {
            return Err(Error::InvalidStructure(
                "continuous-shifter grid must be 4-dimensional".into(),
            ));
        }
        Ok(Self {
            levels: vec![],
            grids: vec![grid],
        })
    }

    pub fn is_discrete(&self) -> bool {
        !self.levels.is_empty()
    }

    /// Index of the level equal to `z`.
    pub fn level_index(&self, z: f64) -> Option<usize> {
        self.levels.iter().position(|&v| v == z)
    }

    /// Grid and point coordinates for (x, z).
    pub fn locate(&self, x: &[f64; 3], z: f64) -> Option<(&GridFn, Vec<f64>)> {
        if self.is_discrete() {
            let j = self.level_index(z)?;
            Some((&self.grids[j], x.to_vec()))
        } else {
            Some((&self.grids[0], vec![x[0], x[1], x[2], z]))
        }
    }

    pub fn contains(&self, x: &[f64; 3], z: f64) -> bool {
        self.locate(x, z).is_some_and(|(g, p)| g.contains(&p))
    }

    pub fn eval(&self, x: &[f64; 3], z: f64) -> Option<f64> {
        self.locate(x, z).and_then(|(g, p)| g.eval(&p))
    }

    /// Partial derivative along `axis` (0 = m, 1 = k, 2 = l, 3 = z).
    pub fn deriv(&self, x: &[f64; 3], z: f64, axis: usize) -> Option<f64> {
        self.locate(x, z).and_then(|(g, p)| {
            if axis < g.dim() {
                g.deriv(&p, axis)
            } else {
                None
            }
        })
    }

    /// Value with linear extrapolation outside the hull; the flag marks extrapolation.
    pub fn eval_extrap(&self, x: &[f64; 3], z: f64) -> Option<(f64, bool)> {
        let (g, p) = self.locate(x, z)?;
        eval_extrap(g, &p)
    }

    /// Applies `f` to every node value of every grid, dropping derivative tensors.
    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Surface {
        Surface {
            levels: self.levels.clone(),
            grids: self
                .grids
                .iter()
                .map(|g| GridFn {
                    derivs: None,
                    ..g.map(&f)
                })
                .collect(),
        }
    }

    /// Multiplies values and cached derivatives by `c`.
    pub fn scaled(&self, c: f64) -> Surface {
        Surface {
            levels: self.levels.clone(),
            grids: self.grids.iter().map(|g| g.scaled(c)).collect(),
        }
    }

    /// Long-format CSV with a z column and one row per node.
    pub fn write_csv<W: Write>(&self, w: W, value_name: &str) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["z", "m", "k", "l", value_name])?;
        for (j, g) in self.grids.iter().enumerate() {
            for flat in 0..g.len() {
                let p = g.node(flat);
                let z = if self.is_discrete() {
                    self.levels[j]
                } else {
                    p[3]
                };
                wr.write_record([
                    fmt_f64(z),
                    fmt_f64(p[0]),
                    fmt_f64(p[1]),
                    fmt_f64(p[2]),
                    fmt_f64(g.values[flat]),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Multilinear value with first-order extrapolation from the nearest hull point.
pub fn eval_extrap(g: &GridFn, p: &[f64]) -> Option<(f64, bool)> {
    let clamped: Vec<f64> = g
        .axes
        .iter()
        .zip(p)
        .map(|(ax, &v)| v.clamp(ax[0], ax[ax.len() - 1]))
        .collect();
    let base = g.eval(&clamped)?;
    let mut out = base;
    let mut moved = false;
    for a in 0..g.dim() {
        let d = p[a] - clamped[a];
        if d != 0.0 {
            moved = true;
            out += g.deriv(&clamped, a)? * d;
        }
    }
    Some((out, moved))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine() -> GridFn {
        let ax = vec![0.0, 0.5, 1.0];
        GridFn::from_fn(
            vec!["m".into(), "k".into(), "l".into()],
            vec![ax.clone(), ax.clone(), ax],
            |x| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[2],
        )
        .unwrap()
    }

    #[test]
    fn extrapolation_is_exact_for_affine() {
        let s =
            Surface::discrete(vec![0.0, 1.0], vec![affine(), affine().map(|v| v + 1.0)]).unwrap();
        let (v, moved) = s.eval_extrap(&[1.5, -0.5, 0.5], 1.0).unwrap();
        assert!(moved);
        assert!((v - (2.0 + 3.0 + 0.5 + 0.25)).abs() < 1e-12);
        let (v, moved) = s.eval_extrap(&[0.2, 0.3, 0.4], 0.0).unwrap();
        assert!(!moved);
        assert!((v - (1.0 + 0.4 - 0.3 + 0.2)).abs() < 1e-12);
        assert!(s.eval(&[0.2, 0.3, 0.4], 2.0).is_none());
    }
}
