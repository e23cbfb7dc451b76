//! Three-step identification of the revenue function, control function, markups,
//! output elasticities, output and prices from a two-period panel.

pub mod control;
pub mod labor;
pub mod overid;
pub mod pipeline;
pub mod step1;
pub mod step3;
pub mod surface;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nonpar::BandwidthRule;

pub use control::{
    select_anchor, step2, Anchor, AnchorScan, CellConstants, ControlResult, LagComponent,
};
pub use labor::{labor_iv, LaborIvResult};
pub use overid::{overid_check, OverIdReport};
pub use pipeline::{identify, Identified};
pub use step1::{step1, Step1Result};
pub use step3::{step3, Step3Result};
pub use surface::Surface;

/// Location and scale normalization points for the control function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormSpec {
    /// m* at the given quantiles of m within the reference cell; k*, l* at pooled medians.
    Quantiles { lo: f64, hi: f64 },
    /// Explicit points.
    Points {
        m0: f64,
        m1: f64,
        k: f64,
        l: f64,
        z: f64,
    },
}

/// Resolved normalization points: the control function is 0 at (m0, k, l, z) and 1 at (m1, k, l, z).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoints {
    pub m0: f64,
    pub m1: f64,
    pub k: f64,
    pub l: f64,
    pub z: f64,
}

/// Treatment of current labor in the control-function step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaborOptions {
    /// Labor responds to the productivity innovation; its control-function slope comes from linear IV.
    pub endogenous: bool,
    /// First-stage F statistic below which the instrument is rejected.
    pub min_first_stage_f: f64,
}

impl Default for LaborOptions {
    fn default() -> Self {
        Self {
            endogenous: false,
            min_first_stage_f: 10.0,
        }
    }
}

/// Estimation tuning shared by every step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentOptions {
    /// Nodes per axis of the (m, k, l) grids under a discrete shifter.
    pub grid_points: usize,
    /// Nodes per axis of the (m, k, l, z) grid under a continuous shifter.
    pub grid_points_continuous: usize,
    /// Nodes per axis of the lagged-input grids.
    pub lag_grid_points: usize,
    /// Quantile range spanned by every grid axis; firms outside are flagged as boundary.
    pub trim: (f64, f64),
    pub norm: NormSpec,
    /// Bandwidth rule for the revenue regression.
    pub revenue_bandwidth: BandwidthRule,
    /// Bandwidth rule for the conditioning components of the material CDF.
    pub cdf_bandwidth: BandwidthRule,
    /// Bandwidth rule for the response smoothing of the material CDF.
    pub cdf_response_bandwidth: BandwidthRule,
    /// Lagged components eligible as anchors, in tie-break order.
    pub anchor_candidates: Vec<LagComponent>,
    /// Quantiles at which each candidate component is placed; other components sit at medians.
    pub anchor_quantiles: Vec<f64>,
    /// Forces the anchor component instead of scanning.
    pub anchor: Option<LagComponent>,
    /// Minimum |t| of the anchor slope at a usable node.
    pub min_t: f64,
    /// Conditional density below this fraction of its maximum along a line marks a node unusable.
    pub density_floor: f64,
    /// Minimum effective kernel sample size.
    pub min_ess: f64,
    /// Minimum rows per (z, z₋₁) cell.
    pub min_cell_rows: usize,
    /// Absolute tolerance per integration segment.
    pub integration_tol: f64,
    /// Sup-norm discrepancy above which the over-identification check is flagged.
    pub overid_threshold: f64,
    pub labor: LaborOptions,
}

impl Default for IdentOptions {
    fn default() -> Self {
        Self {
            grid_points: 21,
            grid_points_continuous: 11,
            lag_grid_points: 11,
            trim: (0.05, 0.95),
            norm: NormSpec::Quantiles { lo: 0.3, hi: 0.7 },
            revenue_bandwidth: BandwidthRule::NormalReference,
            cdf_bandwidth: BandwidthRule::Scaled { factor: 1.0 },
            cdf_response_bandwidth: BandwidthRule::Scaled { factor: 0.5 },
            anchor_candidates: vec![
                LagComponent::M,
                LagComponent::K,
                LagComponent::L,
                LagComponent::Z,
            ],
            anchor_quantiles: vec![0.5],
            anchor: None,
            min_t: 3.0,
            density_floor: 1e-3,
            min_ess: 10.0,
            min_cell_rows: 200,
            integration_tol: 1e-8,
            overid_threshold: 0.25,
            labor: LaborOptions::default(),
        }
    }
}

impl IdentOptions {
    /// Checks every field, naming the first invalid one.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| {
            Err(Error::Config {
                field: field.into(),
                message,
            })
        };
        for (name, v) in [
            ("grid_points", self.grid_points),
            ("grid_points_continuous", self.grid_points_continuous),
            ("lag_grid_points", self.lag_grid_points),
        ] {
            if v < 3 {
                return bad(name, format!("need at least 3 nodes, got {v}"));
            }
        }
        let (lo, hi) = self.trim;
        if !(0.0..0.5).contains(&lo) || !(0.5..=1.0).contains(&hi) || lo >= hi {
            return bad("trim", format!("invalid quantile range ({lo}, {hi})"));
        }
        match self.norm {
            NormSpec::Quantiles { lo: a, hi: b } if !(a > lo && b < hi && a < b) => {
                return bad(
                    "norm",
                    format!("quantiles ({a}, {b}) must be ordered and inside the trim range"),
                );
            }
            NormSpec::Points { m0, m1, .. } if !(m0 < m1) => {
                return bad("norm", format!("m0 = {m0} must be below m1 = {m1}"));
            }
            _ => {}
        }
        self.revenue_bandwidth.validate("revenue_bandwidth")?;
        self.cdf_bandwidth.validate("cdf_bandwidth")?;
        self.cdf_response_bandwidth
            .validate("cdf_response_bandwidth")?;
        if self.anchor_candidates.is_empty() {
            return bad(
                "anchor_candidates",
                "at least one candidate required".into(),
            );
        }
        if self.anchor_quantiles.is_empty()
            || self
                .anchor_quantiles
                .iter()
                .any(|q| !(*q > 0.0 && *q < 1.0))
        {
            return bad("anchor_quantiles", "quantiles must lie in (0, 1)".into());
        }
        for (name, v) in [
            ("min_t", self.min_t),
            ("min_ess", self.min_ess),
            ("integration_tol", self.integration_tol),
            ("overid_threshold", self.overid_threshold),
            ("labor.min_first_stage_f", self.labor.min_first_stage_f),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(name, format!("must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.density_floor) {
            return bad(
                "density_floor",
                format!("must lie in [0, 1), got {}", self.density_floor),
            );
        }
        if self.min_cell_rows < 10 {
            return bad(
                "min_cell_rows",
                format!("need at least 10, got {}", self.min_cell_rows),
            );
        }
        Ok(())
    }
}

/// Per-firm quality flags.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FirmFlags {
    /// Inputs lie inside the trimmed grid hull of the firm's shifter cell.
    pub interior: bool,
    /// The control function was extrapolated to reach the firm.
    pub extrapolated: bool,
    /// The markup denominator ∂φ/∂m − share is nonpositive.
    pub bad_denominator: bool,
}

impl FirmFlags {
    /// Firm enters aggregates.
    pub fn usable(&self) -> bool {
        self.interior && !self.bad_denominator
    }
}
