//! Kernel estimation primitives, tensor grids and quadrature.

pub mod bandwidth;
pub mod cdf;
pub mod grid;
pub mod kernel;
pub mod local_linear;
pub mod quad;

pub use bandwidth::{select_bandwidth, BandwidthRule};
pub use cdf::{CdfAxis, CdfGradient, CondCdf, LocalDeriv, PreparedCdf};
pub use grid::{median, quantile, quantile_axis, GridFn};
pub use local_linear::{cond_mean, cond_mean_report, fit_at, CondMean, LocalFit};
pub use quad::{adaptive_simpson, path_integrate};
