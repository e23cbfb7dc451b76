//! Config-driven batch runner: simulation, identification, normalization, demand,
//! Monte Carlo replication and reporting.

pub mod config;
pub mod report;
pub mod run;

use serde::{Deserialize, Serialize};

pub use config::{DgpConfig, Mode, RunConfig};
pub use report::{diff, report};
pub use run::{run, RunOutcome};

/// One recovered object against its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub object: String,
    pub truth: Option<f64>,
    pub estimate: f64,
    pub rel_error: Option<f64>,
    /// Standard deviation across replications.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd: Option<f64>,
}

impl SummaryRow {
    pub fn new(object: impl Into<String>, truth: Option<f64>, estimate: f64) -> Self {
        let rel_error = truth
            .filter(|t| *t != 0.0 && t.is_finite())
            .map(|t| (estimate - t) / t.abs());
        Self {
            object: object.into(),
            truth,
            estimate,
            rel_error,
            sd: None,
        }
    }

    pub fn with_sd(mut self, sd: f64) -> Self {
        self.sd = Some(sd);
        self
    }
}

/// Titled group of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub rows: Vec<SummaryRow>,
}

/// Summary written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub tables: Vec<Table>,
    /// Mode-specific structured output.
    #[serde(default)]
    pub details: serde_json::Value,
}
