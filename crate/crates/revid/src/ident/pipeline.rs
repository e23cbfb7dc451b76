//! Full identification of one period from a two-period pair.

use serde::{Deserialize, Serialize};

use super::control::{control_parts, finish, step2, CellConstants, ControlResult};
use super::labor::{labor_iv, LaborIvResult};
use super::step1::{norm_points, step1, Step1Result};
use super::step3::{step3, Step3Result};
use super::{IdentOptions, NormPoints};
use crate::error::{Result, ResultExt};
use crate::panel::PanelPair;

/// Every identified object for one period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identified {
    pub period: i64,
    /// Firm ids aligned with every per-firm vector.
    pub ids: Vec<String>,
    /// Per-firm (m, k, l).
    pub inputs: Vec<[f64; 3]>,
    /// Per-firm shifter.
    pub z: Vec<f64>,
    pub norm: NormPoints,
    pub step1: Step1Result,
    pub control: ControlResult,
    pub step3: Step3Result,
    pub labor: Option<LaborIvResult>,
}

/// Runs steps 1–3, with the linear-IV labor branch when labor is endogenous.
pub fn identify(pair: &PanelPair, opts: &IdentOptions) -> Result<Identified> {
    opts.validate()?;
    let np = norm_points(pair, opts).ctx("ident", "normalization")?;
    identify_at(pair, opts, &np)
}

/// As [`identify`] with resolved normalization points.
pub fn identify_at(pair: &PanelPair, opts: &IdentOptions, np: &NormPoints) -> Result<Identified> {
    let s1 = step1(pair, opts, np)?;
    let (control, labor) = if opts.labor.endogenous {
        let parts = control_parts(pair, opts, np, None)?;
        let iv = labor_iv(pair, &parts, np, opts).ctx("ident", "labor_iv")?;
        let constants = CellConstants {
            levels: parts.lambda.levels.clone(),
            c0: iv.c0.clone(),
            c2: iv.c2.clone(),
            ..CellConstants::default()
        };
        let c = finish(pair, opts, parts, constants, Some(-iv.theta_l))?;
        (c, Some(iv))
    } else {
        (step2(pair, opts, np)?, None)
    };
    let s3 = step3(pair, &s1, &control, np, opts).ctx("ident", "step3")?;
    Ok(Identified {
        period: pair.t,
        ids: pair.ids.clone(),
        inputs: (0..pair.len())
            .map(|i| [pair.m[i], pair.k[i], pair.l[i]])
            .collect(),
        z: pair.z.clone(),
        norm: *np,
        step1: s1,
        control,
        step3: s3,
        labor,
    })
}
