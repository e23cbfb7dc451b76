//! Labor slope of the control function by linear IV when labor responds to the innovation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::control::ControlParts;
use super::{IdentOptions, NormPoints};
use crate::error::{Error, Result};
use crate::panel::PanelPair;

/// Linear-IV output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaborIvResult {
    /// H = Λ(m, k, l, z) − Λ_h(m₋₁, k₋₁, l₋₁, z₋₁) per firm.
    pub h: Vec<f64>,
    /// Intercept at the reference shifter cell.
    pub intercept: f64,
    /// Labor coefficient; the control function's labor slope is its negative.
    pub theta_l: f64,
    /// Heteroskedasticity-robust standard error of `theta_l`.
    pub theta_l_se: f64,
    /// OLS coefficient on l − l* from the same regression.
    pub ols_theta_l: f64,
    /// First-stage F statistic of the lagged-labor instrument.
    pub first_stage_f: f64,
    /// Control-function constants per current shifter level, zero at the reference.
    pub c0: Vec<f64>,
    /// h̄ constants per lagged shifter level.
    pub c2: Vec<f64>,
    pub residual_mean: f64,
    /// Sample covariance of the IV residual with lagged labor.
    pub residual_lag_cov: f64,
    pub rows: usize,
}

fn solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    a.lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Just-identified IV of H on (1, l − l*, shifter dummies) with instruments (1, l₋₁, shifter dummies).
pub fn labor_iv(
    pair: &PanelPair,
    parts: &ControlParts,
    np: &NormPoints,
    opts: &IdentOptions,
) -> Result<LaborIvResult> {
    let h: Vec<f64> = parts
        .lambda_i
        .iter()
        .zip(&parts.lambda_h_i)
        .map(|(a, b)| a - b)
        .collect();
    let rows: Vec<usize> = (0..pair.len()).filter(|&i| h[i].is_finite()).collect();
    let levels = parts.lambda.levels.clone();
    let others: Vec<f64> = levels.iter().copied().filter(|&v| v != np.z).collect();
    let p = 2 + 2 * others.len();
    let n = rows.len();
    if n < p + opts.min_cell_rows {
        return Err(Error::TooFewRows {
            got: n,
            needed: p + opts.min_cell_rows,
            context: "labor IV".into(),
        });
    }
    let mut x = DMatrix::<f64>::zeros(n, p);
    let mut w = DMatrix::<f64>::zeros(n, p);
    let mut y = DVector::<f64>::zeros(n);
    for (r, &i) in rows.iter().enumerate() {
        x[(r, 0)] = 1.0;
        w[(r, 0)] = 1.0;
        x[(r, 1)] = pair.l[i] - np.l;
        w[(r, 1)] = pair.l_lag[i];
        for (j, &lv) in others.iter().enumerate() {
            let dz = (pair.z[i] == lv) as u8 as f64;
            let dzl = (pair.z_lag[i] == lv) as u8 as f64;
            x[(r, 2 + 2 * j)] = dz;
            w[(r, 2 + 2 * j)] = dz;
            x[(r, 3 + 2 * j)] = dzl;
            w[(r, 3 + 2 * j)] = dzl;
        }
        y[r] = h[i];
    }

    let wtw = w.transpose() * &w;
    let lcol = x.column(1).into_owned();
    let pi = solve(wtw.clone(), w.transpose() * &lcol, "first-stage design")?;
    let fitted = &w * &pi;
    let resid_fs = &lcol - &fitted;
    let s2 = resid_fs.norm_squared() / (n - p) as f64;
    let wtw_inv = wtw
        .try_inverse()
        .ok_or_else(|| Error::Singular("first-stage design".into()))?;
    let f_stat = pi[1] * pi[1] / (s2 * wtw_inv[(1, 1)]);
    if !(f_stat >= opts.labor.min_first_stage_f) {
        return Err(Error::WeakInstrument {
            f_stat,
            threshold: opts.labor.min_first_stage_f,
        });
    }

    let wtx = w.transpose() * &x;
    let beta = solve(wtx.clone(), w.transpose() * &y, "IV moment matrix")?;
    let u = &y - &x * &beta;
    let wtx_inv = wtx
        .try_inverse()
        .ok_or_else(|| Error::Singular("IV moment matrix".into()))?;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for r in 0..n {
        let wr = w.row(r).transpose();
        meat += (&wr * wr.transpose()) * (u[r] * u[r]);
    }
    let cov = &wtx_inv * meat * wtx_inv.transpose();
    let ols = solve(x.transpose() * &x, x.transpose() * &y, "OLS design")?;

    let mean_lag = rows.iter().map(|&i| pair.l_lag[i]).sum::<f64>() / n as f64;
    let residual_mean = u.sum() / n as f64;
    let residual_lag_cov = rows
        .iter()
        .enumerate()
        .map(|(r, &i)| (u[r] - residual_mean) * (pair.l_lag[i] - mean_lag))
        .sum::<f64>()
        / n as f64;

    let mut c0 = vec![0.0; levels.len()];
    let mut c2 = vec![beta[0]; levels.len()];
    for (j, &lv) in others.iter().enumerate() {
        let li = levels.iter().position(|&v| v == lv).expect("level");
        c0[li] = -beta[2 + 2 * j];
        c2[li] = beta[0] + beta[3 + 2 * j];
    }
    Ok(LaborIvResult {
        h,
        intercept: beta[0],
        theta_l: beta[1],
        theta_l_se: cov[(1, 1)].sqrt(),
        ols_theta_l: ols[1],
        first_stage_f: f_stat,
        c0,
        c2,
        residual_mean,
        residual_lag_cov,
        rows: n,
    })
}
