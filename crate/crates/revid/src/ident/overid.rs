//! Agreement of control functions identified through different anchors.

use serde::{Deserialize, Serialize};

use super::control::{step2_with_anchor, AnchorScan, ControlResult, LagComponent};
use super::{IdentOptions, NormPoints};
use crate::error::Result;
use crate::panel::PanelPair;

/// Pairwise comparison of anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverIdReport {
    pub anchors: Vec<LagComponent>,
    /// Sup-norm of 𝕄⁻¹ differences over central grid nodes, indexed [a][b].
    pub sup_discrepancy: Vec<Vec<f64>>,
    /// Correlation of per-firm ω, indexed [a][b].
    pub omega_corr: Vec<Vec<f64>>,
    /// Largest pairwise sup-norm discrepancy.
    pub max_discrepancy: f64,
    pub threshold: f64,
    /// The largest discrepancy exceeds the threshold.
    pub flagged: bool,
    /// Explanation when fewer than two anchors are valid.
    pub note: Option<String>,
}

/// Whether node index `i` lies in the central three fifths of an axis of length `n`.
fn central(i: usize, n: usize) -> bool {
    let cut = n / 5;
    i >= cut && i + cut < n
}

/// Sup-norm difference of two control functions over central nodes usable in both.
pub fn sup_discrepancy(a: &ControlResult, b: &ControlResult) -> f64 {
    let mut sup: f64 = 0.0;
    for (ga, gb) in a.minv.grids.iter().zip(&b.minv.grids) {
        let shape = ga.shape();
        for flat in 0..ga.len() {
            let idx = ga.unflat(flat);
            if !idx.iter().zip(&shape).all(|(&i, &n)| central(i, n)) {
                continue;
            }
            let (va, vb) = (ga.values[flat], gb.values[flat]);
            if va.is_finite() && vb.is_finite() {
                sup = sup.max((va - vb).abs());
            }
        }
    }
    sup
}

/// Pearson correlation over pairs where both entries are finite.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let pairs: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .collect();
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Reruns the control-function step under every valid anchor component and compares the results.
pub fn overid_check(
    pair: &PanelPair,
    scan: &AnchorScan,
    np: &NormPoints,
    opts: &IdentOptions,
) -> Result<OverIdReport> {
    let anchors = scan.valid_by_component();
    let threshold = opts.overid_threshold;
    if anchors.len() < 2 {
        return Ok(OverIdReport {
            anchors: anchors.iter().map(|a| a.component).collect(),
            sup_discrepancy: vec![],
            omega_corr: vec![],
            max_discrepancy: 0.0,
            threshold,
            flagged: false,
            note: Some(format!(
                "{} valid anchor(s); at least 2 are needed",
                anchors.len()
            )),
        });
    }
    let results: Vec<ControlResult> = anchors
        .iter()
        .map(|a| step2_with_anchor(pair, opts, np, *a))
        .collect::<Result<_>>()?;
    let k = results.len();
    let mut sup = vec![vec![0.0; k]; k];
    let mut corr = vec![vec![1.0; k]; k];
    let mut max_d: f64 = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            let d = sup_discrepancy(&results[a], &results[b]);
            let c = correlation(&results[a].omega, &results[b].omega);
            sup[a][b] = d;
            sup[b][a] = d;
            corr[a][b] = c;
            corr[b][a] = c;
            max_d = max_d.max(d);
        }
    }
    Ok(OverIdReport {
        anchors: anchors.iter().map(|a| a.component).collect(),
        sup_discrepancy: sup,
        omega_corr: corr,
        max_discrepancy: max_d,
        threshold,
        flagged: max_d > threshold,
        note: None,
    })
}
