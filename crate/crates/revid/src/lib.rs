//! Simulation and nonparametric identification of production functions, productivity,
//! markups, prices, quantities and homothetic demand from firm revenue panels.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod demand;
pub mod dgp;
pub mod error;
pub mod ident;
pub mod nonpar;
pub mod norm;
pub mod panel;
pub mod root;

pub use error::{Error, Result};
