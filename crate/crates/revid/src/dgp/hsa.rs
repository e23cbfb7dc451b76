//! Panel simulation under a homothetic single-aggregator demand system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ces::{draw_state, firm_id, State};
use super::rng::{stream, tag};
use super::{normal, ShifterMap, TrueStructure};
use crate::error::{Error, Result};
use crate::panel::{FirmPanel, FirmRecord, Latent, DEFAULT_MAX_Z_LEVELS};
use crate::root::{bisect_newton, expand_bracket};

/// Tolerance on each firm's first-order-condition residual.
pub const FOC_TOL: f64 = 1e-12;
/// Tolerance on |Σ shares − 1| for the aggregator.
pub const AGGREGATOR_TOL: f64 = 1e-10;
const MAX_OUTER: usize = 200;

/// Share function ln S(ξ, z) = ln κ + ρ(z)·ln ξ − ½·curvature·(ln ξ)².
///
/// The demand elasticity of the share is ρ(z) − curvature·ln ξ, so the markup rises
/// with relative size when curvature is positive; zero curvature is CES.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareLaw {
    /// Share scale; defaults to 1/N so that relative quantities are near one.
    #[serde(default)]
    pub kappa: Option<f64>,
    pub rho: ShifterMap,
    #[serde(default)]
    pub curvature: f64,
}

impl ShareLaw {
    pub fn ln_share(&self, ln_xi: f64, z: f64, kappa: f64) -> f64 {
        kappa.ln() + self.rho.at(z) * ln_xi - 0.5 * self.curvature * ln_xi * ln_xi
    }

    /// Elasticity of the share with respect to relative quantity; the inverse markup.
    pub fn elasticity(&self, ln_xi: f64, z: f64) -> f64 {
        self.rho.at(z) - self.curvature * ln_xi
    }
}

/// Technology, input laws and industry budget for the share-function simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HsaProduction {
    /// Technology, productivity and input laws; demand fields are unused.
    pub base: TrueStructure,
    /// Industry budget Φ.
    pub budget: f64,
    /// Per-period budget overrides, indexed from the first period.
    #[serde(default)]
    pub budget_by_period: Vec<f64>,
}

struct FirmInputs {
    z: f64,
    k: f64,
    l: f64,
    omega: f64,
    /// Log output net of the material term.
    y0: f64,
}

/// Solves one firm's material choice given log budget and log aggregator.
fn solve_firm(
    law: &ShareLaw,
    base: &TrueStructure,
    kappa: f64,
    f: &FirmInputs,
    ln_budget: f64,
    ln_a: f64,
) -> Result<f64> {
    let tm = base.theta_m;
    let foc = |m: f64| -> (f64, f64) {
        let ln_xi = f.y0 + tm * m - ln_a;
        let e = law.elasticity(ln_xi, f.z);
        if !(e > 0.0) {
            return (-1e6 - m.abs(), -1.0);
        }
        let val = tm.ln() + ln_budget + law.ln_share(ln_xi, f.z, kappa) + e.ln() - base.p_m - m;
        let der = tm * e - tm * law.curvature / e - 1.0;
        (val, der)
    };
    let rho = law.rho.at(f.z);
    let guess = (tm.ln() + ln_budget + kappa.ln() + rho * (f.y0 - ln_a) + rho.ln() - base.p_m)
        / (1.0 - rho * tm);
    let mut g = |m: f64| foc(m).0;
    let (lo, hi) = expand_bracket(&mut g, guess - 1.0, guess + 1.0, 60)?;
    let mut h = |m: f64| foc(m);
    let m = bisect_newton(&mut h, lo, hi, FOC_TOL, 1e-15)?;
    let resid = foc(m).0;
    if resid.abs() > FOC_TOL * (1.0 + m.abs()) {
        return Err(Error::NoConvergence(format!(
            "firm first-order residual {resid:e}"
        )));
    }
    Ok(m)
}

/// Simulates firms whose revenues are Φ·S(Y/A, z), resolving the aggregator each period.
pub fn simulate_hsa(
    law: &ShareLaw,
    prod: &HsaProduction,
    n_firms: usize,
    n_periods: usize,
    seed: u64,
) -> Result<FirmPanel> {
    let base = &prod.base;
    base.validate()?;
    if n_periods < 2 {
        return Err(Error::Config {
            field: "n_periods".into(),
            message: "at least 2 periods required".into(),
        });
    }
    if !(prod.budget > 0.0) || prod.budget_by_period.iter().any(|b| !(*b > 0.0)) {
        return Err(Error::Config {
            field: "budget".into(),
            message: "must be positive".into(),
        });
    }
    let kappa = law.kappa.unwrap_or(1.0 / n_firms as f64);
    let mut states: Vec<Option<State>> = vec![None; n_firms];
    let mut records = Vec::with_capacity(n_firms * n_periods);
    for period in 1..=n_periods {
        let budget = prod
            .budget_by_period
            .get(period - 1)
            .copied()
            .unwrap_or(prod.budget);
        let ln_budget = budget.ln();
        let inputs: Vec<FirmInputs> = (0..n_firms)
            .into_par_iter()
            .map(|i| {
                let (z, k, l, omega) = draw_state(base, seed, i as u64, period, states[i]);
                let y0 = base.theta0 + base.theta_k * k + base.theta_l * l + omega;
                FirmInputs { z, k, l, omega, y0 }
            })
            .collect();
        let solve_all = |ln_a: f64| -> Result<(Vec<f64>, f64)> {
            let ms: Vec<Result<f64>> = inputs
                .par_iter()
                .map(|f| solve_firm(law, base, kappa, f, ln_budget, ln_a))
                .collect();
            let ms: Vec<f64> = ms.into_iter().collect::<Result<_>>()?;
            let total: f64 = inputs
                .iter()
                .zip(&ms)
                .map(|(f, &m)| {
                    law.ln_share(f.y0 + base.theta_m * m - ln_a, f.z, kappa)
                        .exp()
                })
                .sum();
            Ok((ms, total.ln()))
        };
        let rho_bar = inputs.iter().map(|f| law.rho.at(f.z)).sum::<f64>() / n_firms as f64;
        let mut slope = -rho_bar / (1.0 - rho_bar * base.theta_m);
        let mut ln_a = 0.0;
        let (mut ms, mut g) = solve_all(ln_a)?;
        let mut iter = 0;
        while g.exp_m1().abs() > AGGREGATOR_TOL {
            iter += 1;
            if iter > MAX_OUTER {
                return Err(Error::NoConvergence(format!(
                    "aggregator in period {period}"
                )));
            }
            let mut damping = 1.0;
            loop {
                let cand = ln_a - damping * g / slope;
                let (cm, cg) = solve_all(cand)?;
                if cg.abs() < g.abs() || damping < 1e-6 {
                    let ds = (cg - g) / (cand - ln_a);
                    if ds < 0.0 && ds.is_finite() {
                        slope = ds;
                    }
                    ln_a = cand;
                    ms = cm;
                    g = cg;
                    break;
                }
                damping *= 0.5;
            }
        }
        for (i, f) in inputs.iter().enumerate() {
            let m = ms[i];
            let y = f.y0 + base.theta_m * m;
            let ln_xi = y - ln_a;
            let ln_s = law.ln_share(ln_xi, f.z, kappa);
            let e = law.elasticity(ln_xi, f.z);
            if !(e > 0.0 && e * base.theta_m < 1.0) {
                return Err(Error::ShareCondition(format!(
                    "share elasticity {e} outside (0, 1/θ_m) for firm {i}"
                )));
            }
            let rbar = ln_budget + ln_s;
            let eps = base.sigma_eps
                * normal(&mut stream(seed, tag::MEASUREMENT, i as u64, period as u64));
            records.push(FirmRecord {
                firm_id: firm_id(i),
                period: period as i64,
                r: rbar + eps,
                m,
                k: f.k,
                l: f.l,
                z: f.z,
                mx: (base.p_m + m).exp(),
                latent: Some(Latent {
                    omega: f.omega,
                    markup: 1.0 / e,
                    p: rbar - y,
                    y,
                    eps,
                }),
            });
            states[i] = Some(State {
                k: f.k,
                l: f.l,
                omega: f.omega,
            });
        }
    }
    FirmPanel::from_records(records, DEFAULT_MAX_Z_LEVELS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{InputLaw, ShifterLaw};

    fn production() -> HsaProduction {
        HsaProduction {
            base: TrueStructure::default(),
            budget: 100.0,
            budget_by_period: vec![],
        }
    }

    #[test]
    fn ces_share_gives_constant_markups() {
        let law = ShareLaw {
            kappa: None,
            rho: ShifterMap::Levels(vec![0.8, 0.75]),
            curvature: 0.0,
        };
        let p = simulate_hsa(&law, &production(), 300, 2, 11).unwrap();
        let t = p.truth.as_ref().unwrap();
        for i in 0..p.len() {
            let rho = law.rho.at(p.z[i]);
            assert!((t.markup[i] - 1.0 / rho).abs() < 1e-12);
            let rbar = p.r[i] - t.eps[i];
            assert!((p.mx[i] / rbar.exp() - rho * 0.35).abs() < 1e-9);
        }
        for period in [1, 2] {
            let total: f64 = p
                .rows_of(period)
                .iter()
                .map(|&i| (p.r[i] - t.eps[i]).exp())
                .sum();
            assert!((total / 100.0 - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn variable_markups_rise_with_size() {
        let law = ShareLaw {
            kappa: None,
            rho: ShifterMap::Levels(vec![0.8, 0.75]),
            curvature: 0.05,
        };
        let p = simulate_hsa(&law, &production(), 400, 2, 12).unwrap();
        let t = p.truth.as_ref().unwrap();
        let rows: Vec<usize> = p
            .rows_of(2)
            .into_iter()
            .filter(|&i| p.z[i] == 0.0)
            .collect();
        let (mut big, mut small) = (rows[0], rows[0]);
        for &i in &rows {
            if t.y[i] > t.y[big] {
                big = i;
            }
            if t.y[i] < t.y[small] {
                small = i;
            }
        }
        assert!(t.markup[big] > t.markup[small]);
    }

    #[test]
    fn symmetric_firms_choose_alike() {
        let mut prod = production();
        prod.base.inputs = InputLaw {
            k_sd: 0.0,
            l_sd: 0.0,
            ..InputLaw::default()
        };
        prod.base.sigma_eta = 0.0;
        prod.base.z_law = ShifterLaw::Discrete {
            probs: vec![1.0, 0.0],
        };
        let law = ShareLaw {
            kappa: None,
            rho: ShifterMap::Levels(vec![0.8, 0.75]),
            curvature: 0.05,
        };
        let p = simulate_hsa(&law, &prod, 20, 2, 13).unwrap();
        let t = p.truth.as_ref().unwrap();
        for i in 1..p.len() {
            assert!((p.m[i] - p.m[0]).abs() < 1e-10);
            assert!((t.markup[i] - t.markup[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn doubling_budget_doubles_revenue() {
        let law = ShareLaw {
            kappa: None,
            rho: ShifterMap::Levels(vec![0.8, 0.75]),
            curvature: 0.05,
        };
        let a = simulate_hsa(&law, &production(), 200, 2, 14).unwrap();
        let mut prod = production();
        prod.budget = 200.0;
        let b = simulate_hsa(&law, &prod, 200, 2, 14).unwrap();
        let (ta, tb) = (a.truth.as_ref().unwrap(), b.truth.as_ref().unwrap());
        for i in 0..a.len() {
            let ra = a.r[i] - ta.eps[i];
            let rb = b.r[i] - tb.eps[i];
            assert!((rb - ra - 2f64.ln()).abs() < 1e-8);
            assert!((ta.markup[i] - tb.markup[i]).abs() < 1e-8);
        }
    }
}
