//! Revenue regression E[r | m, k, l, z] and its residual.

use serde::{Deserialize, Serialize};

use super::surface::Surface;
use super::{IdentOptions, NormPoints, NormSpec};
use crate::error::{Error, Result, ResultExt};
use crate::nonpar::{cond_mean_report, median, quantile, quantile_axis, select_bandwidth, GridFn};
use crate::panel::{z_levels, PanelPair};

/// Firms grouped by shifter cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cells {
    /// Shifter levels; empty for a continuous shifter.
    pub levels: Vec<f64>,
    /// Rows per level, or a single group of all rows.
    pub rows: Vec<Vec<usize>>,
}

impl Cells {
    pub fn new(pair: &PanelPair) -> Self {
        if pair.z_discrete {
            let levels = z_levels(&pair.z);
            let rows = levels
                .iter()
                .map(|&lv| (0..pair.len()).filter(|&i| pair.z[i] == lv).collect())
                .collect();
            Self { levels, rows }
        } else {
            Self {
                levels: vec![],
                rows: vec![(0..pair.len()).collect()],
            }
        }
    }

    /// Rows with current shifter `a` and lagged shifter `b`.
    pub fn pair_rows(pair: &PanelPair, a: f64, b: f64) -> Vec<usize> {
        (0..pair.len())
            .filter(|&i| pair.z[i] == a && pair.z_lag[i] == b)
            .collect()
    }
}

/// Resolves normalization points; under a discrete shifter the reference is its lowest level.
pub fn norm_points(pair: &PanelPair, opts: &IdentOptions) -> Result<NormPoints> {
    let np = match opts.norm {
        NormSpec::Points { m0, m1, k, l, z } => NormPoints { m0, m1, k, l, z },
        NormSpec::Quantiles { lo, hi } => {
            let z = if pair.z_discrete {
                z_levels(&pair.z)[0]
            } else {
                median(&pair.z)
            };
            let ms: Vec<f64> = if pair.z_discrete {
                (0..pair.len())
                    .filter(|&i| pair.z[i] == z)
                    .map(|i| pair.m[i])
                    .collect()
            } else {
                pair.m.clone()
            };
            NormPoints {
                m0: quantile(&ms, lo),
                m1: quantile(&ms, hi),
                k: median(&pair.k),
                l: median(&pair.l),
                z,
            }
        }
    };
    if !(np.m0 < np.m1) {
        return Err(Error::Config {
            field: "norm".into(),
            message: format!("normalization points not ordered: {} ≥ {}", np.m0, np.m1),
        });
    }
    if pair.z_discrete && !pair.z.contains(&np.z) {
        return Err(Error::OutsideSupport(format!(
            "reference shifter level {} not observed",
            np.z
        )));
    }
    Ok(np)
}

/// Trimmed quantile axes for (m, k, l) and, for a continuous shifter, z; normalization points inserted.
pub fn cell_axes(
    pair: &PanelPair,
    rows: &[usize],
    opts: &IdentOptions,
    np: &NormPoints,
) -> Result<Vec<Vec<f64>>> {
    let n = if pair.z_discrete {
        opts.grid_points
    } else {
        opts.grid_points_continuous
    };
    let (lo, hi) = opts.trim;
    let col = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let mut axes = vec![
        quantile_axis(&col(&pair.m), n, lo, hi, &[np.m0, np.m1])?,
        quantile_axis(&col(&pair.k), n, lo, hi, &[np.k])?,
        quantile_axis(&col(&pair.l), n, lo, hi, &[np.l])?,
    ];
    if !pair.z_discrete {
        axes.push(quantile_axis(&col(&pair.z), n, lo, hi, &[np.z])?);
    }
    Ok(axes)
}

/// Step-1 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1Result {
    /// Revenue function φ(m, k, l, z).
    pub phi: Surface,
    /// Fitted revenue per firm.
    pub rbar: Vec<f64>,
    /// Residual r − r̄ per firm.
    pub eps: Vec<f64>,
    /// Firms inside the grid hull.
    pub interior: Vec<bool>,
    /// Bandwidths per cell.
    pub bandwidths: Vec<Vec<f64>>,
    /// Grid nodes fitted with widened bandwidths.
    pub widened: usize,
}

/// Local-linear regression of revenue on inputs per shifter cell.
pub fn step1(pair: &PanelPair, opts: &IdentOptions, np: &NormPoints) -> Result<Step1Result> {
    let cells = Cells::new(pair);
    let mut grids = Vec::with_capacity(cells.rows.len());
    let mut bandwidths = Vec::new();
    let mut widened = 0;
    for rows in &cells.rows {
        let (grid, bw, w) = fit_cell(pair, rows, opts, np).ctx("ident", "step1")?;
        grids.push(grid);
        bandwidths.push(bw);
        widened += w;
    }
    let phi = if pair.z_discrete {
        Surface::discrete(cells.levels.clone(), grids)?
    } else {
        Surface::continuous(grids.pop().expect("one continuous grid"))?
    };
    let mut rbar = vec![0.0; pair.len()];
    let mut eps = vec![0.0; pair.len()];
    let mut interior = vec![false; pair.len()];
    for i in 0..pair.len() {
        let x = [pair.m[i], pair.k[i], pair.l[i]];
        let (v, moved) = phi.eval_extrap(&x, pair.z[i]).ok_or_else(|| {
            Error::OutsideSupport(format!("revenue function at firm {}", pair.ids[i]))
        })?;
        rbar[i] = v;
        eps[i] = pair.r[i] - v;
        interior[i] = !moved;
    }
    Ok(Step1Result {
        phi,
        rbar,
        eps,
        interior,
        bandwidths,
        widened,
    })
}

fn fit_cell(
    pair: &PanelPair,
    rows: &[usize],
    opts: &IdentOptions,
    np: &NormPoints,
) -> Result<(GridFn, Vec<f64>, usize)> {
    let col = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let y = col(&pair.r);
    let mut x = vec![col(&pair.m), col(&pair.k), col(&pair.l)];
    let mut names = vec!["m", "k", "l"];
    if !pair.z_discrete {
        x.push(col(&pair.z));
        names.push("z");
    }
    let xr: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
    let bw = select_bandwidth(&xr, &names, opts.revenue_bandwidth)?;
    let axes = cell_axes(pair, rows, opts, np)?;
    let fit = cond_mean_report(&y, &xr, &names, axes, &bw)?;
    Ok((fit.grid, bw, fit.widened))
}
