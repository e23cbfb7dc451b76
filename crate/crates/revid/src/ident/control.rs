//! Control function 𝕄⁻¹(m, k, l, z) from the conditional distribution of materials.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::step1::{cell_axes, Cells};
use super::surface::Surface;
use super::{IdentOptions, NormPoints};
use crate::error::{Error, Result, ResultExt};
use crate::nonpar::bandwidth::mean_sd;
use crate::nonpar::{
    cond_mean, median, path_integrate, quantile, quantile_axis, select_bandwidth, CondCdf, GridFn,
    LocalDeriv,
};
use crate::panel::PanelPair;

/// Lagged component whose derivative anchors the scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagComponent {
    M,
    K,
    L,
    Z,
}

impl LagComponent {
    pub fn name(self) -> &'static str {
        match self {
            LagComponent::M => "m_lag",
            LagComponent::K => "k_lag",
            LagComponent::L => "l_lag",
            LagComponent::Z => "z_lag",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// Chosen anchor: a lagged component and the lagged point (m₋₁, k₋₁, l₋₁, z₋₁).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub component: LagComponent,
    pub point: [f64; 4],
    /// Minimum |∂G/∂q| times sd(q) over the normalization segment.
    pub score: f64,
    /// Minimum |t| over the normalization segment.
    pub min_t: f64,
}

/// One scanned anchor candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorCandidate {
    pub component: LagComponent,
    pub point: [f64; 4],
    pub score: f64,
    pub min_t: f64,
    /// Smallest density ratio to its segment maximum.
    pub min_density_ratio: f64,
    pub valid: bool,
}

/// Every candidate examined by the anchor scan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnchorScan {
    pub candidates: Vec<AnchorCandidate>,
}

impl AnchorScan {
    /// Valid candidates, best first, one per component.
    pub fn valid_by_component(&self) -> Vec<Anchor> {
        let mut best: Vec<Anchor> = Vec::new();
        for c in self.candidates.iter().filter(|c| c.valid) {
            match best.iter_mut().find(|a| a.component == c.component) {
                Some(a) if c.score > a.score => {
                    *a = Anchor {
                        component: c.component,
                        point: c.point,
                        score: c.score,
                        min_t: c.min_t,
                    }
                }
                Some(_) => {}
                None => best.push(Anchor {
                    component: c.component,
                    point: c.point,
                    score: c.score,
                    min_t: c.min_t,
                }),
            }
        }
        best.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(a.component.cmp(&b.component))
        });
        best
    }
}

/// Location constants under a discrete shifter: 𝕄⁻¹ = Λ + c0(z), h̄ = Λ_h + c2(z₋₁).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CellConstants {
    pub levels: Vec<f64>,
    pub c0: Vec<f64>,
    pub c2: Vec<f64>,
    /// Cell means of Λ − Λ_h indexed [z][z₋₁].
    pub cell_means: Vec<Vec<f64>>,
    /// Cell sizes indexed [z][z₋₁].
    pub cell_rows: Vec<Vec<usize>>,
}

/// Kernel CDF of m given current and lagged inputs within one shifter cell.
#[derive(Debug, Clone)]
pub struct CellCdf {
    pub cdf: CondCdf,
    /// z and z₋₁ enter as conditioning components.
    pub with_z: bool,
    pub rows: usize,
}

impl CellCdf {
    pub fn new(pair: &PanelPair, rows: &[usize], opts: &IdentOptions) -> Result<Self> {
        let with_z = !pair.z_discrete;
        let col = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let mut v = vec![col(&pair.k), col(&pair.l)];
        let mut names = vec!["k", "l"];
        if with_z {
            v.push(col(&pair.z));
            names.push("z");
        }
        v.extend([col(&pair.m_lag), col(&pair.k_lag), col(&pair.l_lag)]);
        names.extend(["m_lag", "k_lag", "l_lag"]);
        if with_z {
            v.push(col(&pair.z_lag));
            names.push("z_lag");
        }
        let m = col(&pair.m);
        let vr: Vec<&[f64]> = v.iter().map(Vec::as_slice).collect();
        let h_v = select_bandwidth(&vr, &names, opts.cdf_bandwidth)?;
        let h_m = select_bandwidth(&[&m], &["m"], opts.cdf_response_bandwidth)?[0];
        let mut cdf = CondCdf::new(
            m,
            v,
            names.iter().map(|s| s.to_string()).collect(),
            h_m,
            h_v,
        )?;
        cdf.min_ess = opts.min_ess;
        Ok(Self {
            cdf,
            with_z,
            rows: rows.len(),
        })
    }

    /// Conditioning point from current (k, l, z) and the lagged point.
    pub fn v0(&self, cur: &[f64], lag: &[f64; 4]) -> Vec<f64> {
        let mut v = vec![cur[0], cur[1]];
        if self.with_z {
            v.push(cur[2]);
        }
        v.extend(&lag[..3]);
        if self.with_z {
            v.push(lag[3]);
        }
        v
    }

    /// Index of a lagged component among the conditioning columns.
    pub fn lag_index(&self, q: LagComponent) -> Option<usize> {
        let base = if self.with_z { 3 } else { 2 };
        match q {
            LagComponent::Z if !self.with_z => None,
            _ => Some(base + q.slot()),
        }
    }

    /// Indices of the current k, l and, when present, z columns.
    pub fn current_indices(&self) -> Vec<usize> {
        if self.with_z {
            vec![0, 1, 2]
        } else {
            vec![0, 1]
        }
    }
}

/// Intermediate control-function objects before location constants are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParts {
    pub norm: NormPoints,
    pub anchor: Anchor,
    pub scan: AnchorScan,
    /// Scale constant: ∂h̄/∂q at the anchor equals −s.
    pub s: f64,
    /// Λ per cell; zero at the cell origin (m0, k*, l) under endogenous labor, (m0, k*, l*) otherwise.
    pub lambda: Surface,
    /// Derivative grids ∂𝕄⁻¹/∂m, ∂/∂k, ∂/∂l and, for a continuous shifter, ∂/∂z.
    pub dminv: Vec<Surface>,
    /// Λ at each firm.
    pub lambda_i: Vec<f64>,
    /// Λ_h per lagged cell, zero at the lagged medians.
    pub lambda_h: Surface,
    /// Λ_h at each firm's lagged inputs.
    pub lambda_h_i: Vec<f64>,
    /// Firms reached by extrapolation of Λ or Λ_h.
    pub extrapolated: Vec<bool>,
    /// Firms inside the current-input grid hull.
    pub interior: Vec<bool>,
    /// Grid nodes whose derivatives failed the density or t-statistic floor.
    pub unusable_nodes: usize,
    /// Usable nodes where ∂𝕄⁻¹/∂m ≤ 0.
    pub nonmonotone_nodes: usize,
    /// Nodes whose path integral could not be completed.
    pub unreached_nodes: usize,
    pub labor_endogenous: bool,
}

/// Step-2 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub parts: ControlParts,
    /// ∂h̄/∂q at the anchor.
    pub dh_anchor: f64,
    pub minv: Surface,
    pub constants: CellConstants,
    /// Labor slope of 𝕄⁻¹ from linear IV, when labor is endogenous.
    pub labor_slope: Option<f64>,
    pub omega: Vec<f64>,
    /// h̄(m₋₁, k₋₁, l₋₁, z₋₁) per lagged cell.
    pub hbar: Surface,
    pub hbar_i: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ControlResult {
    /// Empirical distribution function of η.
    pub fn eta_cdf(&self, x: f64) -> f64 {
        self.eta.iter().filter(|&&e| e <= x).count() as f64 / self.eta.len() as f64
    }
}

/// Rows of the cell (z, z₋₁), checked against the configured minimum.
fn cell_rows(pair: &PanelPair, a: f64, b: f64, opts: &IdentOptions) -> Result<Vec<usize>> {
    let rows = Cells::pair_rows(pair, a, b);
    if rows.len() < opts.min_cell_rows {
        return Err(Error::EmptyCell {
            z: a,
            z_lag: b,
            rows: rows.len(),
            needed: opts.min_cell_rows,
        });
    }
    Ok(rows)
}

fn lag_medians(pair: &PanelPair, rows: &[usize]) -> [f64; 4] {
    let col = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    [
        median(&col(&pair.m_lag)),
        median(&col(&pair.k_lag)),
        median(&col(&pair.l_lag)),
        median(&col(&pair.z_lag)),
    ]
}

/// Scans anchor candidates on the normalization segment and picks the max-min slope.
pub fn select_anchor(
    cell: &CellCdf,
    pair: &PanelPair,
    lag_rows: &[usize],
    np: &NormPoints,
    segment: &[f64],
    opts: &IdentOptions,
) -> Result<(Anchor, AnchorScan)> {
    let base = lag_medians(pair, lag_rows);
    let lag_cols: [Vec<f64>; 4] = [
        lag_rows.iter().map(|&i| pair.m_lag[i]).collect(),
        lag_rows.iter().map(|&i| pair.k_lag[i]).collect(),
        lag_rows.iter().map(|&i| pair.l_lag[i]).collect(),
        lag_rows.iter().map(|&i| pair.z_lag[i]).collect(),
    ];
    let components: Vec<LagComponent> = match opts.anchor {
        Some(q) => vec![q],
        None => opts.anchor_candidates.clone(),
    };
    let mut points: Vec<(LagComponent, [f64; 4], f64)> = Vec::new();
    for &q in &components {
        if cell.lag_index(q).is_none() || (opts.labor.endogenous && q == LagComponent::L) {
            continue;
        }
        let (_, sd) = mean_sd(&lag_cols[q.slot()]);
        if !(sd > 0.0) {
            continue;
        }
        for &p in &opts.anchor_quantiles {
            let mut pt = base;
            pt[q.slot()] = quantile(&lag_cols[q.slot()], p);
            points.push((q, pt, sd));
        }
    }
    let cur = [np.k, np.l, np.z];
    let prepared = cell.cdf.prepare(segment);
    let mut scan = AnchorScan::default();
    for (q, pt, sd) in points {
        let qi = cell.lag_index(q).expect("checked above");
        let fits = match prepared.fit(&cell.v0(&cur, &pt), true) {
            Ok(f) => f,
            Err(_) => {
                scan.candidates.push(AnchorCandidate {
                    component: q,
                    point: pt,
                    score: 0.0,
                    min_t: 0.0,
                    min_density_ratio: 0.0,
                    valid: false,
                });
                continue;
            }
        };
        let dmax = fits.iter().map(|f| f.density).fold(0.0, f64::max);
        let mut score = f64::INFINITY;
        let mut min_t = f64::INFINITY;
        let mut min_dr = f64::INFINITY;
        for f in &fits {
            let se = f.se.as_ref().map_or(f64::NAN, |s| s[qi]);
            score = score.min(f.slopes[qi].abs() * sd);
            min_t = min_t.min((f.slopes[qi] / se).abs());
            min_dr = min_dr.min(if dmax > 0.0 { f.density / dmax } else { 0.0 });
        }
        let same_sign =
            fits.iter().all(|f| f.slopes[qi] > 0.0) || fits.iter().all(|f| f.slopes[qi] < 0.0);
        let valid =
            same_sign && min_t >= opts.min_t && min_dr >= opts.density_floor && score.is_finite();
        scan.candidates.push(AnchorCandidate {
            component: q,
            point: pt,
            score,
            min_t,
            min_density_ratio: min_dr,
            valid,
        });
    }
    let mut best: Option<&AnchorCandidate> = None;
    for c in scan.candidates.iter().filter(|c| c.valid) {
        if best.is_none_or(|b| c.score > b.score) {
            best = Some(c);
        }
    }
    match best {
        Some(c) => {
            let a = Anchor { component: c.component, point: c.point, score: c.score, min_t: c.min_t };
            Ok((a, scan))
        }
        None => Err(Error::RankCondition(format!(
            "no lagged component has a slope clearing |t| ≥ {} and the density floor on the normalization segment; \
             lagged inputs carry no usable information on current materials",
            opts.min_t
        ))),
    }
}

/// Derivative ratios (∂G/∂m, ∂G/∂k, ∂G/∂l[, ∂G/∂z]) / ∂G/∂q on a cell grid; NaN at unusable nodes.
fn ratio_grids(
    cell: &CellCdf,
    axes: &[Vec<f64>],
    anchor: &Anchor,
    opts: &IdentOptions,
) -> Result<(Vec<GridFn>, usize)> {
    let qi = cell
        .lag_index(anchor.component)
        .expect("anchor valid for cell");
    let cur_idx = cell.current_indices();
    let names: Vec<String> = ["m", "k", "l", "z"][..axes.len()]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let template = GridFn::new_partial(
        names.clone(),
        axes.to_vec(),
        vec![0.0; axes.iter().map(Vec::len).product()],
    )?;
    let prepared = cell.cdf.prepare(&axes[0]);
    let outer: Vec<usize> = axes[1..].iter().map(Vec::len).collect();
    let n_outer: usize = outer.iter().product();
    let fits: Vec<Result<Vec<LocalDeriv>>> = (0..n_outer)
        .into_par_iter()
        .map(|o| {
            let mut rem = o;
            let mut cur = vec![0.0; outer.len()];
            for a in (0..outer.len()).rev() {
                cur[a] = axes[a + 1][rem % outer[a]];
                rem /= outer[a];
            }
            prepared.fit(&cell.v0(&cur, &anchor.point), true)
        })
        .collect();
    let ng = axes[0].len();
    let mut vals = vec![vec![f64::NAN; template.len()]; axes.len()];
    let mut unusable = 0;
    for (o, fit) in fits.into_iter().enumerate() {
        let fit = match fit {
            Ok(f) => f,
            Err(_) => {
                unusable += ng;
                continue;
            }
        };
        let dmax = fit.iter().map(|f| f.density).fold(0.0, f64::max);
        for (g, f) in fit.iter().enumerate() {
            let flat = g * n_outer + o;
            let sq = f.slopes[qi];
            let se = f.se.as_ref().map_or(f64::NAN, |s| s[qi]);
            if !((sq / se).abs() >= opts.min_t
                && f.density >= opts.density_floor * dmax
                && dmax > 0.0)
            {
                unusable += 1;
                continue;
            }
            vals[0][flat] = f.density / sq;
            for (a, &ci) in cur_idx.iter().enumerate() {
                vals[a + 1][flat] = f.slopes[ci] / sq;
            }
        }
    }
    let grids = vals
        .into_iter()
        .map(|v| GridFn::new_partial(names.clone(), axes.to_vec(), v))
        .collect::<Result<Vec<_>>>()?;
    Ok((grids, unusable))
}

/// Every ordering of `axes`, the preferred order first.
fn orders(axes: &[usize]) -> Vec<Vec<usize>> {
    fn rec(rest: &[usize], acc: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest.is_empty() {
            out.push(acc.clone());
            return;
        }
        for i in 0..rest.len() {
            let mut r = rest.to_vec();
            let x = r.remove(i);
            acc.push(x);
            rec(&r, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    rec(axes, &mut Vec::new(), &mut out);
    out
}

/// Integrates derivative grids from `origin` to every node; NaN where no path succeeds.
fn integrate_grid(
    derivs: &[GridFn],
    integrate_axes: &[usize],
    origin_of: &(dyn Fn(&[f64]) -> Vec<f64> + Sync),
    tol: f64,
) -> (Vec<f64>, usize) {
    let g = &derivs[0];
    let paths = orders(integrate_axes);
    let breaks = g.axes.clone();
    let vals: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|flat| {
            let target = g.node(flat);
            let origin = origin_of(&target);
            let df = |axis: usize, p: &[f64]| derivs[axis].eval(p);
            for order in &paths {
                if let Ok(v) = path_integrate(df, &origin, &target, order, tol, Some(&breaks)) {
                    return v;
                }
            }
            f64::NAN
        })
        .collect();
    let unreached = vals.iter().filter(|v| v.is_nan()).count();
    (vals, unreached)
}

/// Scale, anchor, derivative grids and location-free control functions.
pub fn control_parts(
    pair: &PanelPair,
    opts: &IdentOptions,
    np: &NormPoints,
    forced: Option<Anchor>,
) -> Result<ControlParts> {
    let cells = Cells::new(pair);
    let discrete = pair.z_discrete;
    let levels = cells.levels.clone();
    let ref_idx = if discrete {
        levels.iter().position(|&v| v == np.z).unwrap_or(0)
    } else {
        0
    };
    let ref_lag = if discrete { np.z } else { f64::NAN };
    let cell_data = |a_idx: usize| -> Result<(CellCdf, Vec<usize>)> {
        let rows = if discrete {
            cell_rows(pair, levels[a_idx], ref_lag, opts)?
        } else {
            cells.rows[0].clone()
        };
        Ok((CellCdf::new(pair, &rows, opts)?, rows))
    };
    let (ref_cell, ref_rows) = cell_data(ref_idx).ctx("ident", "step2")?;
    let ref_axes = cell_axes(pair, &cells.rows[ref_idx], opts, np)?;
    let segment: Vec<f64> = ref_axes[0]
        .iter()
        .copied()
        .filter(|&m| m >= np.m0 && m <= np.m1)
        .collect();
    let lag_rows: Vec<usize> = if discrete {
        (0..pair.len()).filter(|&i| pair.z_lag[i] == np.z).collect()
    } else {
        ref_rows.clone()
    };
    let (anchor, scan) = match forced {
        Some(a) => (a, AnchorScan::default()),
        None => select_anchor(&ref_cell, pair, &lag_rows, np, &segment, opts)
            .ctx("ident", "select_anchor")?,
    };

    let n_cells = cells.rows.len();
    let mut ratio: Vec<Vec<GridFn>> = Vec::with_capacity(n_cells);
    let mut unusable = 0;
    let mut cdfs = Vec::with_capacity(n_cells);
    for a_idx in 0..n_cells {
        let (cell, _) = if a_idx == ref_idx {
            (ref_cell.clone(), ref_rows.clone())
        } else {
            cell_data(a_idx).ctx("ident", "step2")?
        };
        let axes = cell_axes(pair, &cells.rows[a_idx], opts, np)?;
        let (r, u) = ratio_grids(&cell, &axes, &anchor, opts).ctx("ident", "step2")?;
        unusable += u;
        ratio.push(r);
        cdfs.push(cell);
    }
    let cur_ref = if discrete {
        vec![np.k, np.l]
    } else {
        vec![np.k, np.l, np.z]
    };
    let at_ref = |m: f64| -> Vec<f64> {
        let mut p = vec![m];
        p.extend(&cur_ref);
        p
    };
    let mut seg_eval = |m: f64| -> Result<f64> {
        ratio[ref_idx][0]
            .eval(&at_ref(m))
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::DensityFloor(format!(
                    "material derivative unusable at m = {m} on the normalization segment"
                ))
            })
    };
    let mut integral = 0.0;
    for w in segment.windows(2) {
        integral +=
            crate::nonpar::adaptive_simpson(&mut seg_eval, w[0], w[1], opts.integration_tol)
                .ctx("ident", "step2")?;
    }
    let s = 1.0 / integral;
    if !s.is_finite() || s == 0.0 {
        return Err(
            Error::NonPositiveScale(format!("normalization integral {integral}"))
                .context("ident", "step2"),
        );
    }

    let endogenous = opts.labor.endogenous;
    let mut lambda_grids = Vec::with_capacity(n_cells);
    let mut dminv: Vec<Vec<GridFn>> = vec![Vec::new(); ref_axes.len()];
    let mut nonmonotone = 0;
    let mut unreached = 0;
    for a_idx in 0..n_cells {
        let scaled: Vec<GridFn> = ratio[a_idx].iter().map(|g| g.map(|v| s * v)).collect();
        nonmonotone += scaled[0]
            .values
            .iter()
            .filter(|v| v.is_finite() && **v <= 0.0)
            .count();
        let g0 = &scaled[0];
        let (m_lo, m_hi) = (g0.axes[0][0], *g0.axes[0].last().expect("axis"));
        let (k_lo, k_hi) = (g0.axes[1][0], *g0.axes[1].last().expect("axis"));
        let m_origin = np.m0.clamp(m_lo, m_hi);
        let k_origin = np.k.clamp(k_lo, k_hi);
        let l_axis = g0.axes[2].clone();
        let z_origin = if discrete {
            f64::NAN
        } else {
            np.z.clamp(g0.axes[3][0], *g0.axes[3].last().expect("axis"))
        };
        let l_origin = np.l.clamp(l_axis[0], *l_axis.last().expect("axis"));
        let origin_of = move |t: &[f64]| -> Vec<f64> {
            let mut o = vec![m_origin, k_origin, if endogenous { t[2] } else { l_origin }];
            if t.len() == 4 {
                o.push(z_origin);
            }
            o
        };
        let axes_int: Vec<usize> = if endogenous {
            if discrete {
                vec![0, 1]
            } else {
                vec![0, 1, 3]
            }
        } else if discrete {
            vec![0, 1, 2]
        } else {
            vec![0, 1, 2, 3]
        };
        let (vals, u) = integrate_grid(&scaled, &axes_int, &origin_of, opts.integration_tol);
        unreached += u;
        lambda_grids.push(GridFn::new_partial(
            g0.names.clone(),
            g0.axes.clone(),
            vals,
        )?);
        for (a, g) in scaled.into_iter().enumerate() {
            dminv[a].push(g);
        }
    }
    let wrap = |grids: Vec<GridFn>| -> Result<Surface> {
        if discrete {
            Surface::discrete(levels.clone(), grids)
        } else {
            Surface::continuous(grids.into_iter().next().expect("one grid"))
        }
    };
    let lambda = wrap(lambda_grids)?;
    let dminv: Vec<Surface> = dminv.into_iter().map(wrap).collect::<Result<_>>()?;

    let mut lambda_i = vec![f64::NAN; pair.len()];
    let mut extrapolated = vec![false; pair.len()];
    let mut interior = vec![false; pair.len()];
    for i in 0..pair.len() {
        let x = [pair.m[i], pair.k[i], pair.l[i]];
        interior[i] = lambda.contains(&x, pair.z[i]);
        if let Some((v, moved)) = lambda.eval_extrap(&x, pair.z[i]) {
            lambda_i[i] = v;
            extrapolated[i] = moved;
        } else {
            extrapolated[i] = true;
        }
    }

    let need_lag = endogenous || (discrete && levels.len() > 1);
    let (lambda_h, lambda_h_i) = if need_lag {
        lag_control(pair, opts, np, &cells, &dminv[0], ref_idx, &cdfs[ref_idx])?
    } else {
        let lg = lag_axes(pair, &(0..pair.len()).collect::<Vec<_>>(), opts, discrete)?;
        let zeros = GridFn::new(
            lag_names(discrete),
            lg.clone(),
            vec![0.0; lg.iter().map(Vec::len).product()],
        )?;
        let surf = if discrete {
            Surface::discrete(levels.clone(), vec![zeros])?
        } else {
            Surface::continuous(zeros)?
        };
        (surf, vec![0.0; pair.len()])
    };
    for (i, e) in extrapolated.iter_mut().enumerate() {
        if !lambda_h_i[i].is_finite() {
            *e = true;
        }
    }
    Ok(ControlParts {
        norm: *np,
        anchor,
        scan,
        s,
        lambda,
        dminv,
        lambda_i,
        lambda_h,
        lambda_h_i,
        extrapolated,
        interior,
        unusable_nodes: unusable,
        nonmonotone_nodes: nonmonotone,
        unreached_nodes: unreached,
        labor_endogenous: endogenous,
    })
}

fn lag_names(discrete: bool) -> Vec<String> {
    let n = if discrete { 3 } else { 4 };
    ["m", "k", "l", "z"][..n]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn lag_axes(
    pair: &PanelPair,
    rows: &[usize],
    opts: &IdentOptions,
    discrete: bool,
) -> Result<Vec<Vec<f64>>> {
    let (lo, hi) = opts.trim;
    let n = opts.lag_grid_points;
    let col = |v: &Vec<f64>| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let med = lag_medians(pair, rows);
    let mut axes = vec![
        quantile_axis(&col(&pair.m_lag), n, lo, hi, &[med[0]])?,
        quantile_axis(&col(&pair.k_lag), n, lo, hi, &[med[1]])?,
        quantile_axis(&col(&pair.l_lag), n, lo, hi, &[med[2]])?,
    ];
    if !discrete {
        axes.push(quantile_axis(&col(&pair.z_lag), n, lo, hi, &[med[3]])?);
    }
    Ok(axes)
}

/// Λ_h, the lagged-input part of h̄ up to a constant per lagged cell, and its value per firm.
fn lag_control(
    pair: &PanelPair,
    opts: &IdentOptions,
    np: &NormPoints,
    cells: &Cells,
    dm: &Surface,
    ref_idx: usize,
    ref_cell: &CellCdf,
) -> Result<(Surface, Vec<f64>)> {
    let discrete = pair.z_discrete;
    let lag_levels: Vec<f64> = if discrete {
        cells.levels.clone()
    } else {
        vec![f64::NAN]
    };
    let m_axis = dm.grids[ref_idx].axes[0].clone();
    let cur = [np.k, np.l, np.z];
    let mm: Vec<f64> = m_axis
        .iter()
        .map(|&m| dm.eval(&[m, np.k, np.l], np.z).unwrap_or(f64::NAN))
        .collect();
    let mut grids = Vec::with_capacity(lag_levels.len());
    for &b in &lag_levels {
        let (cell, lag_rows) = if discrete {
            let rows = cell_rows(pair, np.z, b, opts).ctx("ident", "step2")?;
            let lag_rows: Vec<usize> = (0..pair.len()).filter(|&i| pair.z_lag[i] == b).collect();
            (CellCdf::new(pair, &rows, opts)?, lag_rows)
        } else {
            (ref_cell.clone(), (0..pair.len()).collect())
        };
        let axes = lag_axes(pair, &lag_rows, opts, discrete)?;
        let names = lag_names(discrete);
        let template = GridFn::new_partial(
            names.clone(),
            axes.clone(),
            vec![0.0; axes.iter().map(Vec::len).product()],
        )?;
        let prepared = cell.cdf.prepare(&m_axis);
        let lag_idx: Vec<usize> = [
            LagComponent::M,
            LagComponent::K,
            LagComponent::L,
            LagComponent::Z,
        ][..axes.len()]
            .iter()
            .map(|&q| cell.lag_index(q).expect("lag component present"))
            .collect();
        let derivs: Vec<Vec<f64>> = (0..template.len())
            .into_par_iter()
            .map(|flat| {
                let node = template.node(flat);
                let mut lag = [
                    node[0],
                    node[1],
                    node[2],
                    if discrete { b } else { f64::NAN },
                ];
                if !discrete {
                    lag[3] = node[3];
                }
                let Ok(fit) = prepared.fit(&cell.v0(&cur, &lag), false) else {
                    return vec![f64::NAN; lag_idx.len()];
                };
                let mut denom = 0.0;
                let mut num = vec![0.0; lag_idx.len()];
                for (j, f) in fit.iter().enumerate() {
                    if !(mm[j].is_finite() && mm[j] > 0.0) {
                        continue;
                    }
                    denom += f.density / mm[j];
                    for (c, &li) in lag_idx.iter().enumerate() {
                        num[c] += f.slopes[li];
                    }
                }
                if denom > 0.0 {
                    num.iter().map(|v| -v / denom).collect()
                } else {
                    vec![f64::NAN; lag_idx.len()]
                }
            })
            .collect();
        let dgrids: Vec<GridFn> = (0..axes.len())
            .map(|c| {
                GridFn::new_partial(
                    names.clone(),
                    axes.clone(),
                    derivs.iter().map(|d| d[c]).collect(),
                )
            })
            .collect::<Result<_>>()?;
        let med = lag_medians(pair, &lag_rows);
        let origin: Vec<f64> = (0..axes.len())
            .map(|a| med[a].clamp(axes[a][0], *axes[a].last().expect("axis")))
            .collect();
        let all_axes: Vec<usize> = (0..axes.len()).collect();
        let (vals, _) = integrate_grid(
            &dgrids,
            &all_axes,
            &|_| origin.clone(),
            opts.integration_tol,
        );
        let derivs_t: Vec<Vec<f64>> = (0..axes.len())
            .map(|c| derivs.iter().map(|d| d[c]).collect())
            .collect();
        let mut g = GridFn::new_partial(names, axes, vals)?;
        g.derivs = Some(derivs_t);
        grids.push(g);
    }
    let surf = if discrete {
        Surface::discrete(lag_levels, grids)?
    } else {
        Surface::continuous(grids.pop().expect("grid"))?
    };
    let vals: Vec<f64> = (0..pair.len())
        .map(|i| {
            let x = [pair.m_lag[i], pair.k_lag[i], pair.l_lag[i]];
            surf.eval_extrap(&x, pair.z_lag[i])
                .map_or(f64::NAN, |(v, _)| v)
        })
        .collect();
    Ok((surf, vals))
}

/// Location constants from cell means of Λ − Λ_h, with c0 = 0 at the reference level.
pub fn cell_constants(
    pair: &PanelPair,
    parts: &ControlParts,
    opts: &IdentOptions,
    extra: Option<&[f64]>,
) -> Result<CellConstants> {
    let levels = parts.lambda.levels.clone();
    let nl = levels.len();
    if !pair.z_discrete || nl <= 1 {
        return Ok(CellConstants {
            levels,
            c0: vec![0.0; nl],
            c2: vec![0.0; nl],
            ..Default::default()
        });
    }
    let ref_idx = levels.iter().position(|&v| v == parts.norm.z).unwrap_or(0);
    let mut sums = vec![vec![0.0; nl]; nl];
    let mut counts = vec![vec![0usize; nl]; nl];
    let mut all = vec![vec![0usize; nl]; nl];
    for i in 0..pair.len() {
        let a = levels.iter().position(|&v| v == pair.z[i]).expect("level");
        let b = levels.iter().position(|&v| v == pair.z_lag[i]);
        let Some(b) = b else { continue };
        all[a][b] += 1;
        let h = parts.lambda_i[i] - parts.lambda_h_i[i] + extra.map_or(0.0, |e| e[i]);
        if h.is_finite() {
            sums[a][b] += h;
            counts[a][b] += 1;
        }
    }
    for a in 0..nl {
        for b in 0..nl {
            if counts[a][b] < opts.min_cell_rows {
                return Err(Error::EmptyCell {
                    z: levels[a],
                    z_lag: levels[b],
                    rows: counts[a][b],
                    needed: opts.min_cell_rows,
                });
            }
        }
    }
    let means: Vec<Vec<f64>> = (0..nl)
        .map(|a| (0..nl).map(|b| sums[a][b] / counts[a][b] as f64).collect())
        .collect();
    let c2: Vec<f64> = (0..nl).map(|b| means[ref_idx][b]).collect();
    let c0: Vec<f64> = (0..nl)
        .map(|a| {
            if a == ref_idx {
                return 0.0;
            }
            let (mut num, mut den) = (0.0, 0.0);
            for b in 0..nl {
                let w = counts[a][b] as f64;
                num += w * (c2[b] - means[a][b]);
                den += w;
            }
            num / den
        })
        .collect();
    Ok(CellConstants {
        levels,
        c0,
        c2,
        cell_means: means,
        cell_rows: all,
    })
}

/// Completes the control function from its parts, location constants and an optional labor slope.
pub fn finish(
    pair: &PanelPair,
    opts: &IdentOptions,
    parts: ControlParts,
    constants: CellConstants,
    labor_slope: Option<f64>,
) -> Result<ControlResult> {
    let np = parts.norm;
    let discrete = pair.z_discrete;
    let mut grids = Vec::with_capacity(parts.lambda.grids.len());
    for (j, lg) in parts.lambda.grids.iter().enumerate() {
        let c0 = constants.c0.get(j).copied().unwrap_or(0.0);
        let mut vals = lg.values.clone();
        for (flat, v) in vals.iter_mut().enumerate() {
            let node = lg.node(flat);
            *v += c0;
            if let Some(b) = labor_slope {
                *v += b * (node[2] - np.l);
            }
        }
        let mut derivs: Vec<Vec<f64>> = parts
            .dminv
            .iter()
            .map(|d| d.grids[j].values.clone())
            .collect();
        if let Some(b) = labor_slope {
            let lam = GridFn::new_partial(lg.names.clone(), lg.axes.clone(), lg.values.clone())?;
            derivs[2] = (0..lg.len())
                .map(|f| lam.slope(&lam.node(f), 2).unwrap_or(f64::NAN) + b)
                .collect();
        }
        let mut g = GridFn::new_partial(lg.names.clone(), lg.axes.clone(), vals)?;
        g.derivs = Some(derivs);
        grids.push(g);
    }
    let minv = if discrete {
        Surface::discrete(parts.lambda.levels.clone(), grids)?
    } else {
        Surface::continuous(grids.pop().expect("grid"))?
    };
    let mut extrapolated = parts.extrapolated.clone();
    let omega: Vec<f64> = (0..pair.len())
        .map(|i| {
            let x = [pair.m[i], pair.k[i], pair.l[i]];
            match minv.eval_extrap(&x, pair.z[i]) {
                Some((v, moved)) => {
                    extrapolated[i] |= moved;
                    v
                }
                None => {
                    extrapolated[i] = true;
                    f64::NAN
                }
            }
        })
        .collect();
    let (hbar, hbar_i) = productivity_law(pair, opts, &omega)?;
    let eta: Vec<f64> = omega.iter().zip(&hbar_i).map(|(w, h)| w - h).collect();
    let dh_anchor = -parts.s;
    let mut parts = parts;
    parts.extrapolated = extrapolated;
    Ok(ControlResult {
        parts,
        dh_anchor,
        minv,
        constants,
        labor_slope,
        omega,
        hbar,
        hbar_i,
        eta,
    })
}

/// h̄ = E[ω | m₋₁, k₋₁, l₋₁, z₋₁] by local-linear regression per lagged cell.
fn productivity_law(
    pair: &PanelPair,
    opts: &IdentOptions,
    omega: &[f64],
) -> Result<(Surface, Vec<f64>)> {
    let discrete = pair.z_discrete;
    let levels: Vec<f64> = if discrete {
        crate::panel::z_levels(&pair.z_lag)
    } else {
        vec![f64::NAN]
    };
    let mut grids = Vec::with_capacity(levels.len());
    for &b in &levels {
        let rows: Vec<usize> = (0..pair.len())
            .filter(|&i| omega[i].is_finite() && (!discrete || pair.z_lag[i] == b))
            .collect();
        let col = |v: &[f64]| rows.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let y = col(omega);
        let mut x = vec![col(&pair.m_lag), col(&pair.k_lag), col(&pair.l_lag)];
        let mut names = vec!["m", "k", "l"];
        if !discrete {
            x.push(col(&pair.z_lag));
            names.push("z");
        }
        let xr: Vec<&[f64]> = x.iter().map(Vec::as_slice).collect();
        let bw = select_bandwidth(&xr, &names, opts.revenue_bandwidth).ctx("ident", "step2")?;
        let axes = lag_axes(pair, &rows, opts, discrete)?;
        grids.push(cond_mean(&y, &xr, &names, axes, &bw).ctx("ident", "step2")?);
    }
    let surf = if discrete {
        Surface::discrete(levels, grids)?
    } else {
        Surface::continuous(grids.pop().expect("grid"))?
    };
    let vals = (0..pair.len())
        .map(|i| {
            let x = [pair.m_lag[i], pair.k_lag[i], pair.l_lag[i]];
            surf.eval_extrap(&x, pair.z_lag[i])
                .map_or(f64::NAN, |(v, _)| v)
        })
        .collect();
    Ok((surf, vals))
}

/// Control function, productivity and innovations; location constants from cell means under a discrete shifter.
pub fn step2(pair: &PanelPair, opts: &IdentOptions, np: &NormPoints) -> Result<ControlResult> {
    if opts.labor.endogenous {
        return Err(Error::Config {
            field: "labor.endogenous".into(),
            message: "endogenous labor requires the linear-IV branch; use the full pipeline".into(),
        });
    }
    let parts = control_parts(pair, opts, np, None)?;
    let constants = cell_constants(pair, &parts, opts, None).ctx("ident", "step2")?;
    finish(pair, opts, parts, constants, None)
}

/// As [`step2`] with a fixed anchor.
pub fn step2_with_anchor(
    pair: &PanelPair,
    opts: &IdentOptions,
    np: &NormPoints,
    anchor: Anchor,
) -> Result<ControlResult> {
    let parts = control_parts(pair, opts, np, Some(anchor))?;
    let constants = cell_constants(pair, &parts, opts, None).ctx("ident", "step2")?;
    finish(pair, opts, parts, constants, None)
}
