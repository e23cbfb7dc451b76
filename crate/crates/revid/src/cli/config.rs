//! Run configuration read from TOML or JSON.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::demand::DemandOptions;
use crate::dgp::{HsaProduction, ShareLaw, TrueStructure};
use crate::error::{Error, Result};
use crate::ident::IdentOptions;
use crate::norm::{RegionSpec, ScaleMethod};
use crate::panel::{Schema, DEFAULT_MAX_Z_LEVELS};

/// Subcommand executed by the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Identify,
    Normalize,
    Demand,
    Montecarlo,
    Report,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Identify => "identify",
            Mode::Normalize => "normalize",
            Mode::Demand => "demand",
            Mode::Montecarlo => "montecarlo",
            Mode::Report => "report",
        }
    }
}

/// Simulated data source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DgpConfig {
    Ces {
        n_firms: usize,
        n_periods: usize,
        #[serde(default)]
        structure: TrueStructure,
    },
    Hsa {
        n_firms: usize,
        n_periods: usize,
        share: ShareLaw,
        production: HsaProduction,
    },
}

impl DgpConfig {
    pub fn n_firms(&self) -> usize {
        match self {
            DgpConfig::Ces { n_firms, .. } | DgpConfig::Hsa { n_firms, .. } => *n_firms,
        }
    }

    pub fn n_periods(&self) -> usize {
        match self {
            DgpConfig::Ces { n_periods, .. } | DgpConfig::Hsa { n_periods, .. } => *n_periods,
        }
    }
}

/// Paths and panel handling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoConfig {
    /// Input panel; simulated from `dgp` when absent.
    pub panel: Option<PathBuf>,
    pub schema: Schema,
    /// At most this many distinct shifter values mark the shifter as discrete.
    pub max_z_levels: usize,
    pub out: PathBuf,
    /// Periods to identify; empty means every period with a predecessor.
    pub periods: Vec<i64>,
    /// Minimum rows of a two-period pair.
    pub min_pair_rows: usize,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self {
            panel: None,
            schema: Schema::default(),
            max_z_levels: DEFAULT_MAX_Z_LEVELS,
            out: PathBuf::from("results"),
            periods: vec![],
            min_pair_rows: 100,
        }
    }
}

/// Cross-period normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormConfig {
    pub region: RegionSpec,
    /// Fix each period's scale by local constant returns; otherwise chain variance ratios.
    pub crs: bool,
    /// Ratio methods reported as diagnostics between consecutive periods.
    pub ratio_methods: Vec<ScaleMethod>,
    /// Observed industry price index (period, index).
    pub p_star: Option<PathBuf>,
    /// Input point at which f is fixed across periods; pooled median when absent.
    pub xbar: Option<[f64; 3]>,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self {
            region: RegionSpec::default(),
            crs: true,
            ratio_methods: vec![
                ScaleMethod::EtaVariance,
                ScaleMethod::ElasticityConstancy,
                ScaleMethod::ReturnsConstancy,
            ],
            p_star: None,
            xbar: None,
        }
    }
}

/// Demand construction and counterfactual queries.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandConfig {
    pub options: DemandOptions,
    /// Period whose data point defines the system; the last identified period when absent.
    pub period: Option<i64>,
    /// CSV of (firm_id, Y, z) rows.
    pub counterfactual: Option<PathBuf>,
}

/// Replication settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloConfig {
    pub replications: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { replications: 20 }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    pub seed: u64,
    pub dgp: Option<DgpConfig>,
    pub estimation: IdentOptions,
    pub normalization: NormConfig,
    pub demand: DemandConfig,
    pub io: IoConfig,
    pub montecarlo: MonteCarloConfig,
    /// Rerun the control step under every valid anchor and report the discrepancy.
    pub overid: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: None,
            seed: 1,
            dgp: None,
            estimation: IdentOptions::default(),
            normalization: NormConfig::default(),
            demand: DemandConfig::default(),
            io: IoConfig::default(),
            montecarlo: MonteCarloConfig::default(),
            overid: false,
        }
    }
}

fn bad(field: &str, message: impl Into<String>) -> Error {
    Error::Config {
        field: field.into(),
        message: message.into(),
    }
}

fn must_exist(field: &str, p: &Option<PathBuf>) -> Result<()> {
    match p {
        Some(path) if !path.exists() => {
            Err(bad(field, format!("{} does not exist", path.display())))
        }
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            Ok(serde_json::from_str(text)?)
        } else {
            Ok(toml::from_str(text)?)
        }
    }

    /// Reads a config file; `.json` files are parsed as JSON.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::parse(&text)
        }
    }

    /// Checks every section for the given mode, naming the first invalid field.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if mode == Mode::Report {
            return Ok(());
        }
        self.estimation.validate()?;
        let d = &self.demand.options;
        for (name, v) in [
            ("demand.options.aggregator_tol", d.aggregator_tol),
            ("demand.options.utility_tol", d.utility_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(bad(name, format!("must be positive, got {v}")));
            }
        }
        if d.grid_points < 3 {
            return Err(bad("demand.options.grid_points", "need at least 3 nodes"));
        }
        d.bandwidth.validate("demand.options.bandwidth")?;
        if self.montecarlo.replications < 1 {
            return Err(bad(
                "montecarlo.replications",
                "need at least 1 replication",
            ));
        }
        if self.io.min_pair_rows < 1 {
            return Err(bad("io.min_pair_rows", "must be positive"));
        }
        match &self.dgp {
            Some(DgpConfig::Ces { structure, .. }) => structure.validate()?,
            Some(DgpConfig::Hsa { production, .. }) => production.base.validate()?,
            None => {}
        }
        if let Some(g) = &self.dgp {
            if g.n_firms() == 0 {
                return Err(bad("dgp.n_firms", "must be positive"));
            }
            if g.n_periods() < 2 {
                return Err(bad("dgp.n_periods", "at least 2 periods required"));
            }
        }
        let needs_data = mode != Mode::Simulate && mode != Mode::Montecarlo;
        if mode == Mode::Simulate && self.dgp.is_none() {
            return Err(bad("dgp", "simulate mode needs a dgp section"));
        }
        if mode == Mode::Montecarlo && !matches!(self.dgp, Some(DgpConfig::Ces { .. })) {
            return Err(bad("dgp", "montecarlo mode needs a ces dgp section"));
        }
        if needs_data && self.io.panel.is_none() && self.dgp.is_none() {
            return Err(bad("io.panel", "give a panel path or a dgp section"));
        }
        if needs_data {
            must_exist("io.panel", &self.io.panel)?;
        }
        if mode == Mode::Normalize {
            must_exist("normalization.p_star", &self.normalization.p_star)?;
        }
        if mode == Mode::Demand {
            must_exist("demand.counterfactual", &self.demand.counterfactual)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_agree() {
        let t = r#"
            seed = 7
            [dgp]
            kind = "ces"
            n_firms = 100
            n_periods = 2
            [estimation]
            grid_points = 15
        "#;
        let a = RunConfig::parse(t).unwrap();
        let b = RunConfig::parse(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.estimation.grid_points, 15);
        assert_eq!(a.dgp.as_ref().unwrap().n_firms(), 100);
    }

    #[test]
    fn negative_bandwidth_names_the_field() {
        let t = r#"
            [dgp]
            kind = "ces"
            n_firms = 100
            n_periods = 2
            [estimation.cdf_bandwidth]
            rule = "scaled"
            factor = -1.0
        "#;
        let c = RunConfig::parse(t).unwrap();
        let e = c.validate(Mode::Identify).unwrap_err().to_string();
        assert!(e.contains("cdf_bandwidth"), "{e}");
    }

    #[test]
    fn identify_needs_data() {
        let e = RunConfig::default()
            .validate(Mode::Identify)
            .unwrap_err()
            .to_string();
        assert!(e.contains("io.panel"), "{e}");
    }
}
