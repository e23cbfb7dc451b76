//! Panel simulation under CES demand and Cobb–Douglas technology.

use rand::Rng;
use rayon::prelude::*;

use super::rng::{stream, tag};
use super::{normal, TrueStructure};
use crate::error::{Error, Result};
use crate::panel::{FirmPanel, FirmRecord, Latent, DEFAULT_MAX_Z_LEVELS};

/// Per-period state carried by one firm.
#[derive(Clone, Copy)]
pub(crate) struct State {
    pub k: f64,
    pub l: f64,
    pub omega: f64,
}

/// Draws the shifter, inputs and productivity of one firm-period.
pub(crate) fn draw_state(
    ts: &TrueStructure,
    seed: u64,
    firm: u64,
    period: usize,
    prev: Option<State>,
) -> (f64, f64, f64, f64) {
    let t = period as u64;
    let z = ts
        .z_law
        .draw(stream(seed, tag::SHIFTER, firm, t).gen::<f64>());
    let nu_k = normal(&mut stream(seed, tag::CAPITAL, firm, t));
    let nu_l = normal(&mut stream(seed, tag::LABOR, firm, t));
    let xi = normal(&mut stream(seed, tag::PRODUCTIVITY, firm, t));
    let inp = &ts.inputs;
    let ar = |mean: f64, sd: f64, rho: f64, prev: Option<f64>, nu: f64| match prev {
        Some(p) if rho != 0.0 => mean + rho * (p - mean) + sd * (1.0 - rho * rho).sqrt() * nu,
        _ => mean + sd * nu,
    };
    let k = ar(
        inp.k_mean,
        inp.k_sd,
        inp.k_persistence,
        prev.map(|s| s.k),
        nu_k,
    );
    let (omega, eta) = match prev {
        None => {
            let (mean, sd) = ts.stationary_omega(period);
            let x0 = normal(&mut stream(seed, tag::INITIAL, firm, t));
            (mean + sd * x0, 0.0)
        }
        Some(p) => {
            let mut eta = ts.sigma_eta_at(period) * xi;
            if let Some(c) = &ts.capital_shock {
                eta += c.linear * nu_k + c.quadratic * (nu_k * nu_k - 1.0);
            }
            (ts.h0 + ts.h1 * p.omega + eta, eta)
        }
    };
    let l = match (&ts.labor, prev) {
        (Some(lab), Some(p)) => lab.persistence * p.l + lab.innovation_sd * nu_l + lab.kappa * eta,
        (Some(lab), None) => {
            let var = (lab.innovation_sd.powi(2) + (lab.kappa * ts.sigma_eta_at(period)).powi(2))
                / (1.0 - lab.persistence * lab.persistence);
            var.sqrt() * nu_l
        }
        (None, _) => ar(
            inp.l_mean,
            inp.l_sd,
            inp.l_persistence,
            prev.map(|s| s.l),
            nu_l,
        ),
    };
    (z, k, l, omega)
}

/// Simulates `n_firms` firms over periods 1..=`n_periods`.
pub fn simulate_ces(
    ts: &TrueStructure,
    n_firms: usize,
    n_periods: usize,
    seed: u64,
) -> Result<FirmPanel> {
    ts.validate()?;
    if n_periods < 2 {
        return Err(Error::Config {
            field: "n_periods".into(),
            message: "at least 2 periods required".into(),
        });
    }
    let per_firm: Vec<Result<Vec<FirmRecord>>> = (0..n_firms)
        .into_par_iter()
        .map(|i| {
            let firm = i as u64;
            let mut prev: Option<State> = None;
            let mut out = Vec::with_capacity(n_periods);
            for period in 1..=n_periods {
                let (z, k, l, omega) = draw_state(ts, seed, firm, period, prev);
                let m = ts.material(z, k, l, omega, period);
                let y = ts.output(m, k, l, omega);
                let rho = ts.rho.at(z);
                let alpha = ts.alpha_at(z, period);
                let rbar = alpha + rho * y;
                let eps =
                    ts.sigma_eps * normal(&mut stream(seed, tag::MEASUREMENT, firm, period as u64));
                let mx = (ts.p_m + m).exp();
                let rec = FirmRecord {
                    firm_id: firm_id(i),
                    period: period as i64,
                    r: rbar + eps,
                    m,
                    k,
                    l,
                    z,
                    mx,
                    latent: Some(Latent {
                        omega,
                        markup: 1.0 / rho,
                        p: rbar - y,
                        y,
                        eps,
                    }),
                };
                if ![rec.r, m, k, l, mx, y].iter().all(|v| v.is_finite()) {
                    return Err(Error::InvalidStructure(format!(
                        "non-finite simulated value for firm {i}, period {period}"
                    )));
                }
                out.push(rec);
                prev = Some(State { k, l, omega });
            }
            Ok(out)
        })
        .collect();
    let mut by_firm = Vec::with_capacity(n_firms);
    for f in per_firm {
        by_firm.push(f?);
    }
    let mut records = Vec::with_capacity(n_firms * n_periods);
    for p in 0..n_periods {
        for f in &by_firm {
            records.push(f[p].clone());
        }
    }
    FirmPanel::from_records(records, DEFAULT_MAX_Z_LEVELS)
}

/// Zero-padded firm identifier.
pub(crate) fn firm_id(i: usize) -> String {
    format!("f{i:07}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::ShifterMap;

    #[test]
    fn perfect_competition_share() {
        let ts = TrueStructure {
            theta_m: 0.3,
            rho: ShifterMap::Levels(vec![1.0, 1.0]),
            ..TrueStructure::default()
        };
        let p = simulate_ces(&ts, 200, 2, 1).unwrap();
        let t = p.truth.as_ref().unwrap();
        for i in 0..p.len() {
            let rbar = p.r[i] - t.eps[i];
            assert!((p.mx[i] / rbar.exp() - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn share_and_markup_by_level() {
        let ts = TrueStructure {
            theta_m: 0.25,
            rho: ShifterMap::Levels(vec![0.8, 0.75]),
            ..TrueStructure::default()
        };
        let p = simulate_ces(&ts, 300, 3, 2).unwrap();
        let t = p.truth.as_ref().unwrap();
        for i in 0..p.len() {
            let rho = ts.rho.at(p.z[i]);
            let rbar = p.r[i] - t.eps[i];
            assert!((p.mx[i] / rbar.exp() - rho * 0.25).abs() < 1e-12);
            assert!((t.markup[i] - 1.0 / rho).abs() < 1e-15);
        }
    }

    #[test]
    fn no_measurement_error() {
        let ts = TrueStructure {
            sigma_eps: 0.0,
            ..TrueStructure::default()
        };
        let p = simulate_ces(&ts, 50, 2, 3).unwrap();
        let t = p.truth.as_ref().unwrap();
        for i in 0..p.len() {
            assert_eq!(t.eps[i], 0.0);
            assert!((p.r[i] - (t.p[i] + t.y[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let ts = TrueStructure::default();
        assert_eq!(
            simulate_ces(&ts, 100, 2, 5).unwrap(),
            simulate_ces(&ts, 100, 2, 5).unwrap()
        );
        assert_ne!(
            simulate_ces(&ts, 100, 2, 5).unwrap(),
            simulate_ces(&ts, 100, 2, 6).unwrap()
        );
    }
}
