//! Parametric data-generating processes and their closed-form identified objects.

mod ces;
mod hsa;
pub mod rng;

pub use ces::simulate_ces;
pub use hsa::{simulate_hsa, HsaProduction, ShareLaw, AGGREGATOR_TOL, FOC_TOL};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Law of the demand shifter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShifterLaw {
    /// Integer levels 0, 1, … drawn with the given probabilities.
    Discrete { probs: Vec<f64> },
    /// Continuous uniform on [lo, hi].
    Uniform { lo: f64, hi: f64 },
}

impl ShifterLaw {
    /// Maps a uniform draw to a shifter value.
    pub fn draw(&self, u: f64) -> f64 {
        match self {
            ShifterLaw::Discrete { probs } => {
                let mut acc = 0.0;
                for (j, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return j as f64;
                    }
                }
                (probs.len() - 1) as f64
            }
            ShifterLaw::Uniform { lo, hi } => lo + (hi - lo) * u,
        }
    }

    /// Representative support points used for validation.
    pub fn support_points(&self) -> Vec<f64> {
        match self {
            ShifterLaw::Discrete { probs } => (0..probs.len()).map(|j| j as f64).collect(),
            ShifterLaw::Uniform { lo, hi } => vec![*lo, *hi],
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ShifterLaw::Discrete { .. })
    }
}

/// A real map of the shifter: per-level values or an affine function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShifterMap {
    Levels(Vec<f64>),
    Affine { intercept: f64, slope: f64 },
}

impl ShifterMap {
    pub fn at(&self, z: f64) -> f64 {
        match self {
            ShifterMap::Levels(v) => v[(z.round().max(0.0) as usize).min(v.len() - 1)],
            ShifterMap::Affine { intercept, slope } => intercept + slope * z,
        }
    }
}

/// Laws of log capital and log labor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputLaw {
    pub k_mean: f64,
    pub k_sd: f64,
    /// AR(1) coefficient of log capital around its mean; marginal law is preserved.
    pub k_persistence: f64,
    pub l_mean: f64,
    pub l_sd: f64,
    pub l_persistence: f64,
}

impl Default for InputLaw {
    fn default() -> Self {
        Self {
            k_mean: 0.0,
            k_sd: 0.5,
            k_persistence: 0.0,
            l_mean: 0.0,
            l_sd: 0.5,
            l_persistence: 0.0,
        }
    }
}

/// Labor chosen after the productivity shock: l_t = persistence·l_{t−1} + innovation + kappa·η_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndogenousLabor {
    pub persistence: f64,
    pub innovation_sd: f64,
    pub kappa: f64,
}

/// Productivity innovation loading on the standardized capital innovation ν:
/// η_t gains `linear`·ν + `quadratic`·(ν² − 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapitalShockLoading {
    pub linear: f64,
    pub quadratic: f64,
}

/// Full parameterization of the CES demand / Cobb–Douglas technology process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrueStructure {
    pub theta0: f64,
    pub theta_m: f64,
    pub theta_k: f64,
    pub theta_l: f64,
    /// Intercept of the productivity AR(1).
    pub h0: f64,
    /// Persistence of the productivity AR(1).
    pub h1: f64,
    pub sigma_eta: f64,
    pub sigma_eps: f64,
    /// Log material price.
    pub p_m: f64,
    pub z_law: ShifterLaw,
    /// Demand intercept α(z).
    pub alpha: ShifterMap,
    /// Demand curvature ρ(z); the markup is 1/ρ(z).
    pub rho: ShifterMap,
    pub inputs: InputLaw,
    /// Per-period overrides of σ_η, indexed from the first period.
    pub sigma_eta_by_period: Vec<f64>,
    /// Per-period additive shifts of α, indexed from the first period.
    pub alpha_shift_by_period: Vec<f64>,
    pub labor: Option<EndogenousLabor>,
    pub capital_shock: Option<CapitalShockLoading>,
}

impl Default for TrueStructure {
    fn default() -> Self {
        Self {
            theta0: 0.0,
            theta_m: 0.35,
            theta_k: 0.25,
            theta_l: 0.40,
            h0: 0.0,
            h1: 0.8,
            sigma_eta: 0.2,
            sigma_eps: 0.1,
            p_m: 0.0,
            z_law: ShifterLaw::Discrete {
                probs: vec![0.5, 0.5],
            },
            alpha: ShifterMap::Levels(vec![1.0, 1.2]),
            rho: ShifterMap::Levels(vec![0.8, 0.75]),
            inputs: InputLaw::default(),
            sigma_eta_by_period: vec![],
            alpha_shift_by_period: vec![],
            labor: None,
            capital_shock: None,
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

impl TrueStructure {
    /// Checks 0 < ρ ≤ 1, ρθ_m < 1, |h1| < 1 and the shape of the shifter maps.
    pub fn validate(&self) -> Result<()> {
        if let ShifterLaw::Discrete { probs } = &self.z_law {
            if probs.is_empty() || probs.iter().any(|p| !(*p >= 0.0)) {
                return Err(bad("z_law.probs", "probabilities must be nonnegative"));
            }
            if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(bad("z_law.probs", "probabilities must sum to 1"));
            }
            for (name, map) in [("alpha", &self.alpha), ("rho", &self.rho)] {
                if let ShifterMap::Levels(v) = map {
                    if v.len() != probs.len() {
                        return Err(bad(name, "one value per shifter level required"));
                    }
                }
            }
        } else if let ShifterLaw::Uniform { lo, hi } = &self.z_law {
            if !(hi > lo) {
                return Err(bad("z_law", "uniform law needs hi > lo"));
            }
        }
        if !(self.theta_m > 0.0) {
            return Err(bad("theta_m", "material coefficient must be positive"));
        }
        for z in self.z_law.support_points() {
            let rho = self.rho.at(z);
            if !(rho > 0.0 && rho <= 1.0) {
                return Err(bad("rho", format!("ρ({z}) = {rho} outside (0, 1]")));
            }
            if !(rho * self.theta_m < 1.0) {
                return Err(bad("rho", format!("ρ({z})·θ_m must be below 1")));
            }
        }
        if !(self.h1.abs() < 1.0) {
            return Err(bad("h1", "persistence must satisfy |h1| < 1"));
        }
        if !(self.sigma_eta >= 0.0) || self.sigma_eta_by_period.iter().any(|s| !(*s >= 0.0)) {
            return Err(bad("sigma_eta", "must be nonnegative"));
        }
        if !(self.sigma_eps >= 0.0) {
            return Err(bad("sigma_eps", "must be nonnegative"));
        }
        let i = &self.inputs;
        if !(i.k_sd >= 0.0 && i.l_sd >= 0.0) {
            return Err(bad("inputs", "standard deviations must be nonnegative"));
        }
        if !(i.k_persistence.abs() < 1.0 && i.l_persistence.abs() < 1.0) {
            return Err(bad(
                "inputs",
                "input persistence must be below 1 in absolute value",
            ));
        }
        if let Some(lab) = &self.labor {
            if !(lab.persistence.abs() < 1.0 && lab.innovation_sd >= 0.0) {
                return Err(bad(
                    "labor",
                    "persistence must be below 1, innovation sd nonnegative",
                ));
            }
        }
        Ok(())
    }

    /// σ_η in a 1-based period.
    pub fn sigma_eta_at(&self, period: usize) -> f64 {
        self.sigma_eta_by_period
            .get(period - 1)
            .copied()
            .unwrap_or(self.sigma_eta)
    }

    /// α(z) in a 1-based period.
    pub fn alpha_at(&self, z: f64, period: usize) -> f64 {
        self.alpha.at(z)
            + self
                .alpha_shift_by_period
                .get(period - 1)
                .copied()
                .unwrap_or(0.0)
    }

    /// Log material from the first-order condition.
    pub fn material(&self, z: f64, k: f64, l: f64, omega: f64, period: usize) -> f64 {
        let rho = self.rho.at(z);
        let s = rho * self.theta_m;
        (s.ln()
            + self.alpha_at(z, period)
            + rho * (self.theta0 + self.theta_k * k + self.theta_l * l + omega)
            - self.p_m)
            / (1.0 - s)
    }

    /// Log output.
    pub fn output(&self, m: f64, k: f64, l: f64, omega: f64) -> f64 {
        self.theta0 + self.theta_m * m + self.theta_k * k + self.theta_l * l + omega
    }

    /// Applies the observational-equivalence map (a1, a2, b); requires b ≥ max ρ.
    pub fn transformed(&self, a1: f64, a2: f64, b: f64) -> Result<TrueStructure> {
        if !(b > 0.0) {
            return Err(bad("b", "scale must be positive"));
        }
        let mut t = self.clone();
        t.theta0 = a1 + b * self.theta0;
        t.theta_m = b * self.theta_m;
        t.theta_k = b * self.theta_k;
        t.theta_l = b * self.theta_l;
        t.h0 = a2 * (1.0 - self.h1) + b * self.h0;
        t.sigma_eta = b * self.sigma_eta;
        t.sigma_eta_by_period = self.sigma_eta_by_period.iter().map(|s| b * s).collect();
        t.rho = scale_map(&self.rho, 1.0 / b, 0.0, None);
        t.alpha = scale_map(&self.alpha, 1.0, -(a1 + a2) / b, Some(&self.rho));
        if let Some(lab) = &self.labor {
            t.labor = Some(EndogenousLabor {
                kappa: lab.kappa / b,
                ..lab.clone()
            });
        }
        if let Some(c) = &self.capital_shock {
            t.capital_shock = Some(CapitalShockLoading {
                linear: b * c.linear,
                quadratic: b * c.quadratic,
            });
        }
        t.validate()?;
        Ok(t)
    }

    /// Mean and standard deviation of the stationary productivity law in a period.
    pub fn stationary_omega(&self, period: usize) -> (f64, f64) {
        let mean = self.h0 / (1.0 - self.h1);
        let sd = self.sigma_eta_at(period) / (1.0 - self.h1 * self.h1).sqrt();
        (mean, sd)
    }
}

/// Returns `scale·map + shift·(rho_map or 1)`.
fn scale_map(map: &ShifterMap, scale: f64, shift: f64, rho: Option<&ShifterMap>) -> ShifterMap {
    match (map, rho) {
        (ShifterMap::Levels(v), Some(ShifterMap::Levels(r))) => ShifterMap::Levels(
            v.iter()
                .zip(r)
                .map(|(a, p)| scale * a + shift * p)
                .collect(),
        ),
        (ShifterMap::Levels(v), _) => {
            ShifterMap::Levels(v.iter().map(|a| scale * a + shift).collect())
        }
        (
            ShifterMap::Affine { intercept, slope },
            Some(ShifterMap::Affine {
                intercept: r0,
                slope: r1,
            }),
        ) => ShifterMap::Affine {
            intercept: scale * intercept + shift * r0,
            slope: scale * slope + shift * r1,
        },
        (ShifterMap::Affine { intercept, slope }, _) => ShifterMap::Affine {
            intercept: scale * intercept + shift,
            slope: scale * slope,
        },
    }
}

/// Closed-form control function ω = β_t(z) + β_m(z)m + β_k k + β_l l and revenue objects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleControl {
    pub levels: Vec<f64>,
    pub beta_t: Vec<f64>,
    pub beta_m: Vec<f64>,
    pub beta_k: f64,
    pub beta_l: f64,
    /// φ(z) in φ(x, z) = m + φ(z).
    pub phi: Vec<f64>,
    /// Material revenue share ρ(z)θ_m.
    pub s: Vec<f64>,
}

/// Evaluates the closed-form control objects at the given shifter values (period 1 demand).
pub fn oracle_control(ts: &TrueStructure, levels: &[f64]) -> OracleControl {
    let mut o = OracleControl {
        levels: levels.to_vec(),
        beta_t: vec![],
        beta_m: vec![],
        beta_k: -ts.theta_k,
        beta_l: -ts.theta_l,
        phi: vec![],
        s: vec![],
    };
    for &z in levels {
        let rho = ts.rho.at(z);
        let s = rho * ts.theta_m;
        o.s.push(s);
        o.beta_m.push((1.0 - s) / rho);
        o.beta_t
            .push((ts.p_m - s.ln() - ts.alpha.at(z)) / rho - ts.theta0);
        o.phi.push(ts.p_m - s.ln());
    }
    o
}

impl OracleControl {
    fn idx(&self, z: f64) -> usize {
        self.levels.iter().position(|&v| v == z).unwrap_or(0)
    }

    /// ω implied by observables.
    pub fn omega(&self, m: f64, k: f64, l: f64, z: f64) -> f64 {
        let j = self.idx(z);
        self.beta_t[j] + self.beta_m[j] * m + self.beta_k * k + self.beta_l * l
    }
}

/// Normalization pinning the identified scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleNormalization {
    /// Identified ∂ω/∂m equals 1 at shifter value `z`.
    UnitSlope { z: f64 },
    /// Identified ω equals 0 at m0 and 1 at m1, shifter `z`, other inputs fixed.
    Points { m0: f64, m1: f64, z: f64 },
}

/// Values the pipeline must produce under a normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleIdentified {
    /// Factor b mapping true to identified scale.
    pub scale: f64,
    pub theta_m: f64,
    pub theta_k: f64,
    pub theta_l: f64,
    /// Identified ρ(z) per level.
    pub rho: Vec<f64>,
    /// Identified markup per level.
    pub markup: Vec<f64>,
    /// Identified control-function slopes.
    pub beta_m: Vec<f64>,
    pub beta_k: f64,
    pub beta_l: f64,
    /// Identified elasticity sum, the scale recovered under local constant returns.
    pub crs_scale: f64,
}

/// Closed-form identified structure: the true structure mapped by scale b.
pub fn oracle_identified(
    ts: &TrueStructure,
    levels: &[f64],
    norm: OracleNormalization,
) -> OracleIdentified {
    let oc = oracle_control(ts, levels);
    let b = match norm {
        OracleNormalization::UnitSlope { z } => 1.0 / oc.beta_m[oc.idx(z)],
        OracleNormalization::Points { m0, m1, z } => 1.0 / (oc.beta_m[oc.idx(z)] * (m1 - m0)),
    };
    OracleIdentified {
        scale: b,
        theta_m: b * ts.theta_m,
        theta_k: b * ts.theta_k,
        theta_l: b * ts.theta_l,
        rho: levels.iter().map(|&z| ts.rho.at(z) / b).collect(),
        markup: levels.iter().map(|&z| b / ts.rho.at(z)).collect(),
        beta_m: oc.beta_m.iter().map(|v| b * v).collect(),
        beta_k: b * oc.beta_k,
        beta_l: b * oc.beta_l,
        crs_scale: b * (ts.theta_m + ts.theta_k + ts.theta_l),
    }
}

/// Standard normal draw.
pub(crate) fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level(rho0: f64, rho1: f64, tm: f64, tk: f64, tl: f64) -> TrueStructure {
        TrueStructure {
            theta_m: tm,
            theta_k: tk,
            theta_l: tl,
            rho: ShifterMap::Levels(vec![rho0, rho1]),
            ..TrueStructure::default()
        }
    }

    #[test]
    fn control_betas() {
        let ts = two_level(0.8, 0.75, 0.25, 0.30, 0.45);
        let o = oracle_control(&ts, &[0.0, 1.0]);
        assert!((o.beta_m[0] - 1.0).abs() < 1e-12);
        assert_eq!(o.beta_k, -0.30);
        assert_eq!(o.beta_l, -0.45);
        assert!((o.s[1] - 0.1875).abs() < 1e-12);
    }

    #[test]
    fn perfect_competition_betas() {
        let ts = two_level(1.0, 1.0, 0.3, 0.3, 0.4);
        let o = oracle_control(&ts, &[0.0, 1.0]);
        assert!(o.beta_m.iter().all(|b| (b - 0.7).abs() < 1e-12));
    }

    #[test]
    fn identified_map_under_unit_slope() {
        let ts = two_level(0.8, 0.75, 0.25, 0.30, 0.45);
        let o = oracle_identified(&ts, &[0.0, 1.0], OracleNormalization::UnitSlope { z: 0.0 });
        assert!((o.theta_m - 0.25).abs() < 1e-12);
        assert!((o.rho[0] - 0.8).abs() < 1e-12);
        let s1 = 0.75 * 0.25;
        let bm1 = oracle_control(&ts, &[0.0, 1.0]).beta_m[1];
        assert!((o.rho[1] - (1.0 - s1) / bm1).abs() < 1e-12);
        let ts = two_level(0.8, 0.75, 0.35, 0.25, 0.40);
        let o = oracle_identified(&ts, &[0.0, 1.0], OracleNormalization::UnitSlope { z: 0.0 });
        let s0 = 0.28;
        assert!((o.crs_scale - (s0 / (1.0 - s0) + 0.25 * o.scale + 0.40 * o.scale)).abs() < 1e-12);
        assert!((o.theta_m - s0 / (1.0 - s0)).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_structures() {
        for ts in [
            TrueStructure {
                rho: ShifterMap::Levels(vec![1.2, 0.7]),
                ..TrueStructure::default()
            },
            TrueStructure {
                h1: 1.0,
                ..TrueStructure::default()
            },
            TrueStructure {
                alpha: ShifterMap::Levels(vec![1.0]),
                ..TrueStructure::default()
            },
        ] {
            assert!(ts.validate().is_err());
        }
        assert!(TrueStructure::default().validate().is_ok());
    }
}
