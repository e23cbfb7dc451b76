//! Homothetic single-aggregator demand built from identified quantities and revenues.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::Identified;
use crate::nonpar::{cond_mean, quantile_axis, select_bandwidth, BandwidthRule, GridFn};
use crate::root::{bisect, expand_bracket};

/// Log revenue φ(u, z) as a function of log quantity u and the shifter.
pub trait RevenueFn: Send + Sync {
    /// Value and whether u lies outside the evaluable support.
    fn eval(&self, u: f64, z: f64) -> Result<(f64, bool)>;
    /// ∂φ/∂u.
    fn slope(&self, u: f64, z: f64) -> Result<f64>;
    /// Evaluable range of u at z.
    fn support(&self, z: f64) -> Result<(f64, f64)>;
}

/// Constant-elasticity revenue φ(u, z) = intercept(z) + ρ(z)·u.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CesRevenue {
    pub levels: Vec<f64>,
    pub intercept: Vec<f64>,
    pub rho: Vec<f64>,
}

impl CesRevenue {
    fn idx(&self, z: f64) -> Result<usize> {
        self.levels
            .iter()
            .position(|&v| v == z)
            .ok_or_else(|| Error::OutsideSupport(format!("shifter level {z} unknown")))
    }
}

impl RevenueFn for CesRevenue {
    fn eval(&self, u: f64, z: f64) -> Result<(f64, bool)> {
        let j = self.idx(z)?;
        Ok((self.intercept[j] + self.rho[j] * u, false))
    }

    fn slope(&self, _u: f64, z: f64) -> Result<f64> {
        Ok(self.rho[self.idx(z)?])
    }

    fn support(&self, z: f64) -> Result<(f64, f64)> {
        self.idx(z)?;
        Ok((f64::NEG_INFINITY, f64::INFINITY))
    }
}

/// Revenue function estimated on a u grid per shifter level, or on a (u, z) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRevenue {
    /// Shifter levels; empty when z is the second grid axis.
    pub levels: Vec<f64>,
    pub grids: Vec<GridFn>,
}

impl GridRevenue {
    fn locate(&self, z: f64) -> Result<(&GridFn, Option<f64>)> {
        if self.levels.is_empty() {
            let g = &self.grids[0];
            let ax = &g.axes[1];
            Ok((g, Some(z.clamp(ax[0], ax[ax.len() - 1]))))
        } else {
            let j = self
                .levels
                .iter()
                .position(|&v| v == z)
                .ok_or_else(|| Error::OutsideSupport(format!("shifter level {z} unknown")))?;
            Ok((&self.grids[j], None))
        }
    }

    fn point(u: f64, zc: Option<f64>) -> Vec<f64> {
        match zc {
            Some(z) => vec![u, z],
            None => vec![u],
        }
    }
}

impl RevenueFn for GridRevenue {
    fn eval(&self, u: f64, z: f64) -> Result<(f64, bool)> {
        let (g, zc) = self.locate(z)?;
        let ax = &g.axes[0];
        let (lo, hi) = (ax[0], ax[ax.len() - 1]);
        let uc = u.clamp(lo, hi);
        let p = Self::point(uc, zc);
        let v = g
            .eval(&p)
            .ok_or_else(|| Error::OutsideSupport(format!("revenue at u = {u}, z = {z}")))?;
        let moved = uc != u || zc.is_some_and(|c| c != z);
        if uc == u {
            return Ok((v, moved));
        }
        let s = g
            .deriv(&p, 0)
            .ok_or_else(|| Error::OutsideSupport(format!("revenue slope at u = {u}")))?;
        Ok((v + s * (u - uc), moved))
    }

    fn slope(&self, u: f64, z: f64) -> Result<f64> {
        let (g, zc) = self.locate(z)?;
        let ax = &g.axes[0];
        let p = Self::point(u.clamp(ax[0], ax[ax.len() - 1]), zc);
        g.deriv(&p, 0)
            .ok_or_else(|| Error::OutsideSupport(format!("revenue slope at u = {u}, z = {z}")))
    }

    fn support(&self, z: f64) -> Result<(f64, f64)> {
        let (g, _) = self.locate(z)?;
        let ax = &g.axes[0];
        Ok((ax[0], ax[ax.len() - 1]))
    }
}

/// Tuning of the demand construction and solvers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandOptions {
    /// Nodes of the log-quantity axis.
    pub grid_points: usize,
    /// Quantile range of log quantity spanned by the axis.
    pub trim: (f64, f64),
    pub bandwidth: BandwidthRule,
    /// Geometric bracket expansions allowed when solving for the aggregator.
    pub max_doublings: usize,
    /// Absolute tolerance on ln A.
    pub aggregator_tol: f64,
    /// Absolute tolerance per utility integral.
    pub utility_tol: f64,
}

impl Default for DemandOptions {
    fn default() -> Self {
        Self {
            grid_points: 41,
            trim: (0.01, 0.99),
            bandwidth: BandwidthRule::NormalReference,
            max_doublings: 60,
            aggregator_tol: 1e-13,
            utility_tol: 1e-8,
        }
    }
}

/// Point where a share condition fails.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareViolation {
    pub u: f64,
    pub z: f64,
    /// Elasticity of the share with respect to quantity; must lie in (0, 1).
    pub elasticity: f64,
}

/// Share-condition diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ShareChecks {
    /// Data-point firms checked.
    pub on_manifold: usize,
    /// Grid nodes checked away from the data point; violations there are warnings.
    pub off_manifold: usize,
    pub off_manifold_violations: Vec<ShareViolation>,
    /// Largest |ln P − p| at the data point between the smoothed system and identified prices.
    pub max_price_gap: f64,
}

/// Demand system with shares S(Y, z) = exp φ(ln Y, z) / Φ and data point A = 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HsaSystem<R> {
    pub revenue: R,
    /// Industry budget Σ exp φ(ln Y⁰, z⁰).
    pub budget: f64,
    pub ids: Vec<String>,
    /// Log quantities at the data point.
    pub u0: Vec<f64>,
    pub z0: Vec<f64>,
    pub checks: ShareChecks,
    pub opts: DemandOptions,
}

/// Aggregator solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregator {
    pub a: f64,
    pub ln_a: f64,
    /// Firms whose relative quantity fell outside the evaluable support.
    pub extrapolated: usize,
}

/// Prices, shares, aggregator and utility for one quantity vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub aggregator: Aggregator,
    pub prices: Vec<f64>,
    pub shares: Vec<f64>,
    pub ln_utility: f64,
}

impl<R: RevenueFn> HsaSystem<R> {
    /// Fixes the data point; the budget makes shares sum to one there.
    pub fn new(
        revenue: R,
        ids: Vec<String>,
        u0: Vec<f64>,
        z0: Vec<f64>,
        opts: DemandOptions,
    ) -> Result<Self> {
        if u0.len() != z0.len() || u0.len() != ids.len() || u0.is_empty() {
            return Err(Error::InvalidStructure(
                "data point needs equally long, nonempty ids, quantities and shifters".into(),
            ));
        }
        let mut budget = 0.0;
        for (&u, &z) in u0.iter().zip(&z0) {
            budget += revenue.eval(u, z)?.0.exp();
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::InvalidStructure(format!("industry budget {budget}")));
        }
        Ok(Self {
            revenue,
            budget,
            ids,
            u0,
            z0,
            checks: ShareChecks::default(),
            opts,
        })
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }

    /// S(Y/A, z) with u = ln Y.
    pub fn share(&self, u: f64, z: f64, ln_a: f64) -> Result<f64> {
        Ok((self.revenue.eval(u - ln_a, z)?.0).exp() / self.budget)
    }

    /// Checks 0 < ∂φ/∂u < 1 at the data point, then on `nodes`; fails on data-point violations.
    pub fn check_shares(&mut self, nodes: &[(f64, f64)]) -> Result<()> {
        let mut bad = Vec::new();
        for (&u, &z) in self.u0.iter().zip(&self.z0) {
            let e = self.revenue.slope(u, z)?;
            if !(e > 0.0 && e < 1.0) {
                bad.push(ShareViolation {
                    u,
                    z,
                    elasticity: e,
                });
            }
        }
        if !bad.is_empty() {
            let list: Vec<String> = bad
                .iter()
                .take(10)
                .map(|v| format!("(u={:.4}, z={}, e={:.4})", v.u, v.z, v.elasticity))
                .collect();
            return Err(Error::ShareCondition(format!(
                "{} data-point firms, e.g. {}",
                bad.len(),
                list.join(" ")
            )));
        }
        let mut off = Vec::new();
        for &(u, z) in nodes {
            let e = self.revenue.slope(u, z)?;
            if !(e > 0.0 && e < 1.0) {
                off.push(ShareViolation {
                    u,
                    z,
                    elasticity: e,
                });
            }
        }
        self.checks.on_manifold = self.u0.len();
        self.checks.off_manifold = nodes.len();
        self.checks.off_manifold_violations = off;
        Ok(())
    }

    fn check_input(&self, u: &[f64], z: &[f64]) -> Result<()> {
        if u.len() != self.len() || z.len() != self.len() {
            return Err(Error::InvalidStructure(format!(
                "expected {} firms, got {}",
                self.len(),
                u.len()
            )));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                column: "Y".into(),
                row: i,
            });
        }
        Ok(())
    }

    /// Solves Σ S(Yᵢ/A, zᵢ) = 1 by bisection on ln A.
    pub fn solve_aggregator(&self, u: &[f64], z: &[f64]) -> Result<Aggregator> {
        self.check_input(u, z)?;
        let excess = |ln_a: f64| -> f64 {
            let s: f64 = u
                .iter()
                .zip(z)
                .map(|(&ui, &zi)| self.share(ui, zi, ln_a).unwrap_or(f64::NAN))
                .sum();
            s - 1.0
        };
        if !excess(0.0).is_finite() {
            return Err(Error::OutsideSupport(
                "share function not evaluable at the query".into(),
            ));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (&ui, &zi) in u.iter().zip(z) {
            let (a, b) = self.revenue.support(zi)?;
            lo = lo.min(ui - b);
            hi = hi.max(ui - a);
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            let c = u.iter().zip(&self.u0).map(|(a, b)| a - b).sum::<f64>() / u.len() as f64;
            lo = c - 1.0;
            hi = c + 1.0;
        }
        let mut f = excess;
        let (a, b) = expand_bracket(&mut f, lo, hi, self.opts.max_doublings)?;
        let ln_a = bisect(&mut f, a, b, self.opts.aggregator_tol)?;
        let mut extrapolated = 0;
        for (&ui, &zi) in u.iter().zip(z) {
            if self.revenue.eval(ui - ln_a, zi)?.1 {
                extrapolated += 1;
            }
        }
        Ok(Aggregator {
            a: ln_a.exp(),
            ln_a,
            extrapolated,
        })
    }

    /// Pᵢ = (Φ / Yᵢ)·S(Yᵢ/A, zᵢ) for every firm.
    pub fn inverse_demand(&self, u: &[f64], z: &[f64], agg: &Aggregator) -> Result<Vec<f64>> {
        self.check_input(u, z)?;
        u.iter()
            .zip(z)
            .map(|(&ui, &zi)| Ok(self.budget * self.share(ui, zi, agg.ln_a)? / ui.exp()))
            .collect()
    }

    /// ln U = ln A + Σᵢ ∫ S(ξ, zᵢ)/ξ dξ from Y⁰ᵢ to Yᵢ/A.
    pub fn utility(&self, u: &[f64], z: &[f64], agg: &Aggregator) -> Result<f64> {
        self.check_input(u, z)?;
        let tol = self.opts.utility_tol;
        let terms: Vec<Result<f64>> = (0..u.len())
            .into_par_iter()
            .map(|i| {
                let mut g = |v: f64| self.share(v, z[i], 0.0);
                crate::nonpar::adaptive_simpson(&mut g, self.u0[i], u[i] - agg.ln_a, tol)
            })
            .collect();
        let mut sum = agg.ln_a;
        for t in terms {
            sum += t?;
        }
        Ok(sum)
    }

    /// Aggregator, prices, shares and utility at (Y, z).
    pub fn evaluate(&self, u: &[f64], z: &[f64]) -> Result<Evaluation> {
        let agg = self.solve_aggregator(u, z)?;
        let prices = self.inverse_demand(u, z, &agg)?;
        let shares = u
            .iter()
            .zip(&prices)
            .map(|(&ui, p)| p * ui.exp() / self.budget)
            .collect();
        let ln_utility = self.utility(u, z, &agg)?;
        Ok(Evaluation {
            aggregator: agg,
            prices,
            shares,
            ln_utility,
        })
    }

    /// Data-point quantities with the listed firms replaced by (Y, z).
    pub fn counterfactual(&self, rows: &[(String, f64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
        let pos: HashMap<&str, usize> = self
            .ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut u = self.u0.clone();
        let mut z = self.z0.clone();
        for (id, y, zi) in rows {
            let &i = pos.get(id.as_str()).ok_or_else(|| {
                Error::InvalidStructure(format!("firm `{id}` is not part of the demand system"))
            })?;
            if !(*y > 0.0 && y.is_finite()) {
                return Err(Error::NonFinite {
                    column: "Y".into(),
                    row: i,
                });
            }
            u[i] = y.ln();
            z[i] = *zi;
        }
        Ok((u, z))
    }
}

/// Estimates φ(u, z) from identified log output and fitted log revenue, fixes the data
/// point at the identified quantities and checks the share conditions.
pub fn build_hsa(id: &Identified, opts: &DemandOptions) -> Result<HsaSystem<GridRevenue>> {
    let n = id.ids.len();
    let z_all = &id.z;
    let keep: Vec<usize> = (0..n)
        .filter(|&i| {
            id.step3.y[i].is_finite() && id.step1.rbar[i].is_finite() && id.step3.flags[i].usable()
        })
        .collect();
    let discrete = id.step1.phi.is_discrete();
    let mut nodes = Vec::new();
    let revenue = if discrete {
        let levels = id.step1.phi.levels.clone();
        let mut grids = Vec::with_capacity(levels.len());
        for &lv in &levels {
            let rows: Vec<usize> = keep.iter().copied().filter(|&i| z_all[i] == lv).collect();
            let u: Vec<f64> = rows.iter().map(|&i| id.step3.y[i]).collect();
            let r: Vec<f64> = rows.iter().map(|&i| id.step1.rbar[i]).collect();
            let ax = quantile_axis(&u, opts.grid_points, opts.trim.0, opts.trim.1, &[])?;
            let bw = select_bandwidth(&[&u], &["y"], opts.bandwidth)?;
            nodes.extend(ax.iter().map(|&v| (v, lv)));
            grids.push(cond_mean(&r, &[&u], &["y"], vec![ax], &bw)?);
        }
        GridRevenue { levels, grids }
    } else {
        let u: Vec<f64> = keep.iter().map(|&i| id.step3.y[i]).collect();
        let zs: Vec<f64> = keep.iter().map(|&i| z_all[i]).collect();
        let r: Vec<f64> = keep.iter().map(|&i| id.step1.rbar[i]).collect();
        let ax = vec![
            quantile_axis(&u, opts.grid_points, opts.trim.0, opts.trim.1, &[])?,
            quantile_axis(&zs, opts.grid_points.min(21), opts.trim.0, opts.trim.1, &[])?,
        ];
        for &a in &ax[0] {
            nodes.extend(ax[1].iter().map(|&b| (a, b)));
        }
        let bw = select_bandwidth(&[&u, &zs], &["y", "z"], opts.bandwidth)?;
        GridRevenue {
            levels: vec![],
            grids: vec![cond_mean(&r, &[&u, &zs], &["y", "z"], ax, &bw)?],
        }
    };
    let ids = keep.iter().map(|&i| id.ids[i].clone()).collect();
    let u0 = keep.iter().map(|&i| id.step3.y[i]).collect();
    let z0 = keep.iter().map(|&i| z_all[i]).collect();
    let mut sys = HsaSystem::new(revenue, ids, u0, z0, opts.clone())?;
    sys.check_shares(&nodes)?;
    let mut gap: f64 = 0.0;
    for (j, &i) in keep.iter().enumerate() {
        let lp = (sys.revenue.eval(sys.u0[j], sys.z0[j])?.0) - sys.u0[j];
        gap = gap.max((lp - id.step3.p[i]).abs());
    }
    sys.checks.max_price_gap = gap;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ces_system(n: usize, rho: f64) -> HsaSystem<CesRevenue> {
        let rev = CesRevenue {
            levels: vec![0.0, 1.0],
            intercept: vec![0.3, -0.1],
            rho: vec![rho, rho],
        };
        let ids = (0..n).map(|i| format!("f{i}")).collect();
        let u0 = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let z0 = (0..n).map(|i| (i % 2) as f64).collect();
        HsaSystem::new(rev, ids, u0, z0, DemandOptions::default()).unwrap()
    }

    #[test]
    fn data_point_has_unit_aggregator() {
        let s = ces_system(50, 0.8);
        let a = s.solve_aggregator(&s.u0, &s.z0).unwrap();
        assert!((a.a - 1.0).abs() < 1e-10);
        let total: f64 =
            s.u0.iter()
                .zip(&s.z0)
                .map(|(&u, &z)| s.share(u, z, 0.0).unwrap())
                .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregator_is_homogeneous() {
        let s = ces_system(30, 0.75);
        let a = s.solve_aggregator(&s.u0, &s.z0).unwrap().a;
        for k in [0.5f64, 2.0, 10.0] {
            let u: Vec<f64> = s.u0.iter().map(|v| v + k.ln()).collect();
            let ak = s.solve_aggregator(&u, &s.z0).unwrap().a;
            assert!((ak - k * a).abs() <= 1e-8 * k * a);
        }
    }

    #[test]
    fn single_firm_matches_scalar_inversion() {
        let rev = CesRevenue {
            levels: vec![0.0],
            intercept: vec![0.0],
            rho: vec![0.5],
        };
        let s = HsaSystem::new(
            rev,
            vec!["a".into()],
            vec![0.0],
            vec![0.0],
            DemandOptions::default(),
        )
        .unwrap();
        let a = s.solve_aggregator(&[2.0], &[0.0]).unwrap();
        assert!((a.ln_a - 2.0).abs() < 1e-10);
    }

    #[test]
    fn budget_adds_up_and_equal_firms_get_equal_prices() {
        let s = ces_system(20, 0.8);
        let mut u = s.u0.clone();
        u[3] += 0.4;
        let ev = s.evaluate(&u, &s.z0).unwrap();
        let spend: f64 = ev.prices.iter().zip(&u).map(|(p, v)| p * v.exp()).sum();
        assert!((spend - s.budget).abs() < 1e-8 * s.budget);
        let mut u = vec![0.1; 20];
        u[5] = 0.1;
        let z = vec![0.0; 20];
        let ev = s.evaluate(&u, &z).unwrap();
        assert!((ev.prices[0] - ev.prices[5]).abs() < 1e-12 * ev.prices[0]);
    }

    #[test]
    fn utility_is_homogeneous_and_matches_ces() {
        let s = ces_system(25, 0.8);
        let eval = |u: &[f64]| {
            let a = s.solve_aggregator(u, &s.z0).unwrap();
            s.utility(u, &s.z0, &a).unwrap()
        };
        let base = eval(&s.u0);
        assert!(base.abs() < 1e-8);
        let doubled: Vec<f64> = s.u0.iter().map(|v| v + 2f64.ln()).collect();
        assert!((eval(&doubled) - base - 2f64.ln()).abs() < 1e-6);
        let closed = |u: &[f64]| {
            let t: f64 = u
                .iter()
                .zip(&s.z0)
                .map(|(&v, &z)| (s.revenue.eval(v, z).unwrap().0).exp() / s.budget)
                .sum();
            t.ln() / 0.8
        };
        let mut u = s.u0.clone();
        u[0] += 0.5;
        u[7] -= 0.3;
        assert!(((eval(&u) - base) - (closed(&u) - closed(&s.u0))).abs() < 1e-6);
    }

    #[test]
    fn grid_revenue_extrapolates_linearly_and_flags() {
        let g = GridFn::from_fn(vec!["y".into()], vec![vec![0.0, 1.0, 2.0]], |x| {
            0.5 * x[0] + 1.0
        })
        .unwrap()
        .with_derivs(vec![vec![0.5; 3]])
        .unwrap();
        let r = GridRevenue {
            levels: vec![0.0],
            grids: vec![g],
        };
        let (v, moved) = r.eval(3.0, 0.0).unwrap();
        assert!((v - 2.5).abs() < 1e-12 && moved);
        let (v, moved) = r.eval(1.5, 0.0).unwrap();
        assert!((v - 1.75).abs() < 1e-12 && !moved);
        assert!(r.eval(0.0, 2.0).is_err());
    }

    #[test]
    fn share_conditions_reject_competitive_revenue() {
        let rev = CesRevenue {
            levels: vec![0.0],
            intercept: vec![0.0],
            rho: vec![1.0],
        };
        let mut s = HsaSystem::new(
            rev,
            vec!["a".into()],
            vec![0.0],
            vec![0.0],
            DemandOptions::default(),
        )
        .unwrap();
        assert!(matches!(s.check_shares(&[]), Err(Error::ShareCondition(_))));
    }
}
