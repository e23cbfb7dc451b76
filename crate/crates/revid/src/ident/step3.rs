//! Markups, output elasticities, the production function, output and prices.

use serde::{Deserialize, Serialize};

use super::control::ControlResult;
use super::step1::Step1Result;
use super::surface::{eval_extrap, Surface};
use super::{FirmFlags, IdentOptions, NormPoints};
use crate::error::{Error, Result};
use crate::nonpar::{path_integrate, GridFn};
use crate::panel::PanelPair;

/// Step-3 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step3Result {
    pub markup: Vec<f64>,
    /// μ(m, k, l, z) on the grid nodes.
    pub markup_fn: Surface,
    /// ∂f/∂m, ∂f/∂k, ∂f/∂l on the grid nodes of each shifter cell.
    pub elasticity_fn: Vec<Surface>,
    /// Per-firm (∂f/∂m, ∂f/∂k, ∂f/∂l).
    pub elasticity: Vec<[f64; 3]>,
    /// Production function f(m, k, l), zero at (m0, k*, l*).
    pub f: GridFn,
    pub f_i: Vec<f64>,
    pub y: Vec<f64>,
    pub p: Vec<f64>,
    /// Material revenue share mx / exp(r̄).
    pub share: Vec<f64>,
    /// Revenue elasticity of materials at fixed productivity, (∂f/∂m) / μ, over the share.
    pub dlw: Vec<f64>,
    /// Mean of ln mx − m, the log material price used at grid nodes.
    pub log_material_price: f64,
    pub flags: Vec<FirmFlags>,
}

fn clamp_to(g: &GridFn, p: &[f64]) -> Vec<f64> {
    g.axes
        .iter()
        .zip(p)
        .map(|(ax, &v)| v.clamp(ax[0], ax[ax.len() - 1]))
        .collect()
}

/// Derivative at the nearest hull point.
fn deriv_clamped(s: &Surface, x: &[f64; 3], z: f64, axis: usize) -> Option<f64> {
    let (g, p) = s.locate(x, z)?;
    g.deriv(&clamp_to(g, &p), axis)
}

/// Markups from the material first-order condition, then elasticities and f by integration.
pub fn step3(
    pair: &PanelPair,
    s1: &Step1Result,
    s2: &ControlResult,
    np: &NormPoints,
    opts: &IdentOptions,
) -> Result<Step3Result> {
    let n = pair.len();
    let lpm = (0..n).map(|i| pair.mx[i].ln() - pair.m[i]).sum::<f64>() / n as f64;
    let mut markup = vec![f64::NAN; n];
    let mut elasticity = vec![[f64::NAN; 3]; n];
    let mut share = vec![f64::NAN; n];
    let mut flags = vec![FirmFlags::default(); n];
    for i in 0..n {
        let x = [pair.m[i], pair.k[i], pair.l[i]];
        let z = pair.z[i];
        share[i] = pair.mx[i] / s1.rbar[i].exp();
        flags[i].interior = s1.interior[i] && s2.parts.interior[i];
        flags[i].extrapolated = s2.parts.extrapolated[i];
        let d = (0..3)
            .map(|a| {
                Some((
                    deriv_clamped(&s1.phi, &x, z, a)?,
                    deriv_clamped(&s2.minv, &x, z, a)?,
                ))
            })
            .collect::<Option<Vec<(f64, f64)>>>();
        let Some(d) = d else {
            flags[i].interior = false;
            continue;
        };
        let denom = d[0].0 - share[i];
        if !(denom > 0.0) || !(d[0].1 > 0.0) {
            flags[i].bad_denominator = true;
            continue;
        }
        let mu = d[0].1 / denom;
        markup[i] = mu;
        for a in 0..3 {
            elasticity[i][a] = mu * d[a].0 - d[a].1;
        }
    }

    let mut mk_grids = Vec::new();
    let mut el_grids: Vec<Vec<GridFn>> = vec![Vec::new(); 3];
    for (j, pg) in s1.phi.grids.iter().enumerate() {
        let mg = &s2.minv.grids[j];
        let mut mu = vec![f64::NAN; pg.len()];
        let mut el = vec![vec![f64::NAN; pg.len()]; 3];
        for flat in 0..pg.len() {
            let node = pg.node(flat);
            let share_n = (node[0] + lpm - pg.values[flat]).exp();
            let dphi: Vec<Option<f64>> = (0..3).map(|a| pg.deriv(&node, a)).collect();
            let dm: Vec<Option<f64>> = (0..3).map(|a| mg.deriv(&node, a)).collect();
            let (Some(p0), Some(m0)) = (dphi[0], dm[0]) else {
                continue;
            };
            let denom = p0 - share_n;
            if !(denom > 0.0 && m0 > 0.0) {
                continue;
            }
            mu[flat] = m0 / denom;
            for a in 0..3 {
                if let (Some(pa), Some(ma)) = (dphi[a], dm[a]) {
                    el[a][flat] = mu[flat] * pa - ma;
                }
            }
        }
        mk_grids.push(GridFn::new_partial(pg.names.clone(), pg.axes.clone(), mu)?);
        for (a, v) in el.into_iter().enumerate() {
            el_grids[a].push(GridFn::new_partial(pg.names.clone(), pg.axes.clone(), v)?);
        }
    }
    let wrap = |grids: Vec<GridFn>| -> Result<Surface> {
        if s1.phi.is_discrete() {
            Surface::discrete(s1.phi.levels.clone(), grids)
        } else {
            Surface::continuous(grids.into_iter().next().expect("grid"))
        }
    };
    let markup_fn = wrap(mk_grids)?;
    let elasticity_fn: Vec<Surface> = el_grids.into_iter().map(wrap).collect::<Result<_>>()?;

    let f = production_function(pair, &elasticity_fn, np, opts)?;
    let mut f_i = vec![f64::NAN; n];
    let mut y = vec![f64::NAN; n];
    let mut p = vec![f64::NAN; n];
    let mut dlw = vec![f64::NAN; n];
    for i in 0..n {
        let x = [pair.m[i], pair.k[i], pair.l[i]];
        if let Some((v, moved)) = eval_extrap(&f, &x) {
            f_i[i] = v;
            flags[i].extrapolated |= moved;
            y[i] = v + s2.omega[i];
            p[i] = s1.rbar[i] - y[i];
        }
        if markup[i].is_finite() {
            dlw[i] = elasticity[i][0] / markup[i] / share[i];
        }
    }
    Ok(Step3Result {
        markup,
        markup_fn,
        elasticity_fn,
        elasticity,
        f,
        f_i,
        y,
        p,
        share,
        dlw,
        log_material_price: lpm,
        flags,
    })
}

/// f on the reference-cell axes from shifter-frequency-weighted elasticities.
fn production_function(
    pair: &PanelPair,
    el: &[Surface],
    np: &NormPoints,
    opts: &IdentOptions,
) -> Result<GridFn> {
    let discrete = el[0].is_discrete();
    let (axes, weights): (Vec<Vec<f64>>, Vec<(f64, f64)>) = if discrete {
        let j = el[0].level_index(np.z).unwrap_or(0);
        let w = el[0]
            .levels
            .iter()
            .map(|&lv| (lv, pair.z.iter().filter(|&&z| z == lv).count() as f64))
            .collect();
        (el[0].grids[j].axes.clone(), w)
    } else {
        let g = &el[0].grids[0];
        (
            g.axes[..3].to_vec(),
            g.axes[3].iter().map(|&z| (z, 1.0)).collect(),
        )
    };
    let names: Vec<String> = ["m", "k", "l"].iter().map(|s| s.to_string()).collect();
    let n: usize = axes.iter().map(Vec::len).product();
    let template = GridFn::new_partial(names.clone(), axes.clone(), vec![0.0; n])?;
    let mut derivs = vec![vec![f64::NAN; n]; 3];
    for flat in 0..n {
        let node = template.node(flat);
        let x = [node[0], node[1], node[2]];
        for (a, d) in derivs.iter_mut().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for &(z, w) in &weights {
                if let Some(v) = el[a].eval(&x, z).filter(|v| v.is_finite()) {
                    num += w * v;
                    den += w;
                }
            }
            if den > 0.0 {
                d[flat] = num / den;
            }
        }
    }
    let dgrids: Vec<GridFn> = derivs
        .iter()
        .map(|d| GridFn::new_partial(names.clone(), axes.clone(), d.clone()))
        .collect::<Result<_>>()?;
    let origin = [
        np.m0.clamp(axes[0][0], *axes[0].last().expect("axis")),
        np.k.clamp(axes[1][0], *axes[1].last().expect("axis")),
        np.l.clamp(axes[2][0], *axes[2].last().expect("axis")),
    ];
    let orders = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut vals = vec![f64::NAN; n];
    for (flat, v) in vals.iter_mut().enumerate() {
        let target = template.node(flat);
        let df = |axis: usize, p: &[f64]| dgrids[axis].eval(p);
        for order in &orders {
            if let Ok(r) = path_integrate(
                df,
                &origin,
                &target,
                order,
                opts.integration_tol,
                Some(&axes),
            ) {
                *v = r;
                break;
            }
        }
    }
    if vals.iter().all(|v| v.is_nan()) {
        return Err(Error::OutsideSupport(
            "production function unreachable from the normalization point".into(),
        ));
    }
    let mut g = GridFn::new_partial(names, axes, vals)?;
    g.derivs = Some(derivs);
    Ok(g)
}
