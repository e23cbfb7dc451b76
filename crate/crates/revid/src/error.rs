//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by ingestion, simulation, estimation and the runner.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-finite or unparseable value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("duplicate record for firm `{id}` in period {period}")]
    Duplicate { id: String, period: i64 },

    #[error("period {0} not present in panel")]
    MissingPeriod(i64),

    #[error("too few rows: {got} available, {needed} required ({context})")]
    TooFewRows {
        got: usize,
        needed: usize,
        context: String,
    },

    #[error("invalid structure: {0}")]
    InvalidStructure(String),

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("degenerate column `{0}`: zero variance")]
    DegenerateColumn(String),

    #[error("singular local design at query {0}")]
    Singular(String),

    #[error("point outside evaluable support: {0}")]
    OutsideSupport(String),

    #[error("generalized rank condition fails: {0}")]
    RankCondition(String),

    #[error("derivative ratio unusable: {0}")]
    DensityFloor(String),

    #[error("nonpositive scale: {0}")]
    NonPositiveScale(String),

    #[error("empty cell (z = {z}, lagged z = {z_lag}): {rows} rows, {needed} required")]
    EmptyCell {
        z: f64,
        z_lag: f64,
        rows: usize,
        needed: usize,
    },

    #[error("weak instrument: first-stage F = {f_stat:.3} below threshold {threshold}")]
    WeakInstrument { f_stat: f64, threshold: f64 },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("share condition violated: {0}")]
    ShareCondition(String),

    #[error("no bracket found: {0}")]
    Bracket(String),

    #[error("product sets differ across periods: {0}")]
    ProductSet(String),

    #[error("incomplete results directory, missing: {}", .0.join(", "))]
    Incomplete(Vec<String>),

    #[error("{module}::{op}: {source}")]
    Context {
        module: &'static str,
        op: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wraps an error with the module and operation that surfaced it.
    pub fn context(self, module: &'static str, op: &'static str) -> Self {
        Error::Context {
            module,
            op,
            source: Box::new(self),
        }
    }

    /// Innermost error beneath any context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            e => e,
        }
    }
}

/// Extension for attaching module and operation names to results.
pub trait ResultExt<T> {
    fn ctx(self, module: &'static str, op: &'static str) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn ctx(self, module: &'static str, op: &'static str) -> Result<T> {
        self.map_err(|e| e.context(module, op))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
