//! Per-component kernel bandwidth rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonpar::kernel::{norm_pdf, norm_pdf_conv};

/// Minimum number of observations per continuous component.
pub const MIN_OBS: usize = 50;

/// Cap on the sample used by cross-validation.
const LSCV_MAX_OBS: usize = 2000;

/// Bandwidth selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BandwidthRule {
    /// 1.06·σ̂·N^(−1/5) per component.
    Silverman,
    /// Multivariate normal reference (4/(d+2))^(1/(d+4))·σ̂·N^(−1/(d+4)).
    NormalReference,
    /// A fixed multiple of each component's standard deviation.
    Scaled { factor: f64 },
    /// Univariate least-squares cross-validation per component.
    Lscv,
}

impl BandwidthRule {
    /// Rejects nonpositive scale factors.
    pub fn validate(&self, field: &str) -> Result<()> {
        match self {
            BandwidthRule::Scaled { factor } if !(*factor > 0.0 && factor.is_finite()) => {
                Err(Error::Config {
                    field: field.into(),
                    message: format!("bandwidth factor must be positive, got {factor}"),
                })
            }
            _ => Ok(()),
        }
    }
}

/// Sample mean and standard deviation (N−1 denominator).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Selects one bandwidth per column.
pub fn select_bandwidth(
    columns: &[&[f64]],
    names: &[&str],
    rule: BandwidthRule,
) -> Result<Vec<f64>> {
    let d = columns.len();
    columns
        .iter()
        .enumerate()
        .map(|(j, col)| {
            let name = names.get(j).copied().unwrap_or("?");
            if col.len() < MIN_OBS {
                return Err(Error::TooFewRows {
                    got: col.len(),
                    needed: MIN_OBS,
                    context: format!("bandwidth for `{name}`"),
                });
            }
            let (_, sd) = mean_sd(col);
            if !(sd > 0.0) {
                return Err(Error::DegenerateColumn(name.to_string()));
            }
            let n = col.len() as f64;
            Ok(match rule {
                BandwidthRule::Silverman => 1.06 * sd * n.powf(-0.2),
                BandwidthRule::NormalReference => {
                    let df = d as f64;
                    (4.0 / (df + 2.0)).powf(1.0 / (df + 4.0)) * sd * n.powf(-1.0 / (df + 4.0))
                }
                BandwidthRule::Scaled { factor } => factor * sd,
                BandwidthRule::Lscv => lscv(col, sd),
            })
        })
        .collect()
}

/// Minimizes the Gaussian least-squares cross-validation criterion over a log grid.
fn lscv(col: &[f64], sd: f64) -> f64 {
    let stride = col.len().div_ceil(LSCV_MAX_OBS);
    let x: Vec<f64> = col.iter().step_by(stride).copied().collect();
    let n = x.len() as f64;
    let h_ref = 1.06 * sd * n.powf(-0.2);
    let mut best = (f64::INFINITY, h_ref);
    for j in 0..61 {
        let h = h_ref * 10f64.powf(-1.0 + 1.5 * j as f64 / 60.0);
        let mut conv = 0.0;
        let mut loo = 0.0;
        for a in 0..x.len() {
            for b in (a + 1)..x.len() {
                let u = (x[a] - x[b]) / h;
                conv += norm_pdf_conv(u);
                loo += norm_pdf(u);
            }
        }
        let conv = (2.0 * conv + n * norm_pdf_conv(0.0)) / (n * n * h);
        let loo = 2.0 * (2.0 * loo) / (n * (n - 1.0) * h);
        let score = conv - loo;
        if score < best.0 {
            best = (score, h);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn silverman_formula() {
        let x = normal_sample(1000, 1);
        let (_, sd) = mean_sd(&x);
        let h = select_bandwidth(&[&x], &["x"], BandwidthRule::Silverman).unwrap()[0];
        assert!((h / sd - 0.266).abs() < 1e-3);
    }

    #[test]
    fn constant_column_named() {
        let x = vec![1.0; 100];
        match select_bandwidth(&[&x], &["cap"], BandwidthRule::Silverman) {
            Err(Error::DegenerateColumn(c)) => assert_eq!(c, "cap"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn equal_columns_equal_bandwidths() {
        let x = normal_sample(500, 2);
        for rule in [
            BandwidthRule::Silverman,
            BandwidthRule::NormalReference,
            BandwidthRule::Scaled { factor: 0.7 },
            BandwidthRule::Lscv,
        ] {
            let h = select_bandwidth(&[&x, &x], &["a", "b"], rule).unwrap();
            assert_eq!(h[0], h[1]);
        }
    }

    #[test]
    fn lscv_is_near_reference_for_gaussian_data() {
        let x = normal_sample(1500, 3);
        let h = select_bandwidth(&[&x], &["x"], BandwidthRule::Lscv).unwrap()[0];
        assert!(h > 0.1 && h < 0.6, "h = {h}");
    }

    #[test]
    fn too_few_rows() {
        let x = normal_sample(10, 4);
        assert!(matches!(
            select_bandwidth(&[&x], &["x"], BandwidthRule::Silverman),
            Err(Error::TooFewRows { .. })
        ));
    }
}
