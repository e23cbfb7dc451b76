//! Scale and location normalization across periods.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{Identified, Step3Result};
use crate::nonpar::bandwidth::mean_sd;
use crate::nonpar::{median, quantile, GridFn};
use crate::panel::{FirmPanel, PanelPair};

/// Evaluation points per axis of the region lattice.
pub const REGION_LATTICE: usize = 5;

/// Box of (m, k, l) values on which elasticities are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

/// How the averaging region is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    /// Per-input quantile range of the pooled inputs.
    Quantiles { lo: f64, hi: f64 },
    /// Explicit bounds.
    Box { lo: [f64; 3], hi: [f64; 3] },
}

impl Default for RegionSpec {
    fn default() -> Self {
        RegionSpec::Quantiles { lo: 0.4, hi: 0.6 }
    }
}

impl RegionSpec {
    /// Resolves the region on the inputs of the given pairs.
    pub fn resolve(&self, pairs: &[&PanelPair]) -> Result<Region> {
        match *self {
            RegionSpec::Box { lo, hi } => {
                if (0..3).any(|a| !(lo[a] < hi[a])) {
                    return Err(Error::Config {
                        field: "region".into(),
                        message: "box bounds must satisfy lo < hi".into(),
                    });
                }
                Ok(Region { lo, hi })
            }
            RegionSpec::Quantiles { lo, hi } => {
                if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                    return Err(Error::Config {
                        field: "region".into(),
                        message: format!("quantiles ({lo}, {hi}) must satisfy 0 ≤ lo < hi ≤ 1"),
                    });
                }
                let cols = pooled_inputs(pairs);
                let mut r = Region {
                    lo: [0.0; 3],
                    hi: [0.0; 3],
                };
                for a in 0..3 {
                    r.lo[a] = quantile(&cols[a], lo);
                    r.hi[a] = quantile(&cols[a], hi);
                }
                Ok(r)
            }
        }
    }
}

fn pooled_inputs(pairs: &[&PanelPair]) -> [Vec<f64>; 3] {
    let mut cols: [Vec<f64>; 3] = Default::default();
    for p in pairs {
        cols[0].extend(&p.m);
        cols[1].extend(&p.k);
        cols[2].extend(&p.l);
    }
    cols
}

/// Pooled median input vector.
pub fn pooled_median(pairs: &[&PanelPair]) -> [f64; 3] {
    let cols = pooled_inputs(pairs);
    [median(&cols[0]), median(&cols[1]), median(&cols[2])]
}

impl Region {
    /// Evenly spaced lattice with `n` points per axis.
    pub fn lattice(&self, n: usize) -> Vec<[f64; 3]> {
        let at = |a: usize, i: usize| {
            if n < 2 {
                0.5 * (self.lo[a] + self.hi[a])
            } else {
                self.lo[a] + (self.hi[a] - self.lo[a]) * i as f64 / (n - 1) as f64
            }
        };
        let mut out = Vec::with_capacity(n * n * n);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    out.push([at(0, i), at(1, j), at(2, k)]);
                }
            }
        }
        out
    }
}

/// Route to the scale factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleMethod {
    /// Innovation variance constant across periods.
    EtaVariance,
    /// Each output elasticity constant across periods.
    ElasticityConstancy,
    /// Returns to scale constant across periods.
    ReturnsConstancy,
    /// Elasticities sum to one on the region.
    LocalCrs,
}

/// Scale factor b mapping true to identified magnitudes, absolute or as a period ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleLink {
    /// b_{t+1} / b_t.
    pub b_ratio: Option<f64>,
    pub method: ScaleMethod,
    /// Absolute scale of one period.
    pub b_t: Option<f64>,
    pub region: Option<Region>,
    /// Region points that entered the average.
    pub points: usize,
    /// Result rests on a user-asserted technology restriction.
    pub assumption_dependent: bool,
}

/// (∂f/∂m, ∂f/∂k, ∂f/∂l) of the production function at the region lattice.
fn region_elasticities(f: &GridFn, region: &Region) -> Vec<([f64; 3], [f64; 3])> {
    region
        .lattice(REGION_LATTICE)
        .into_iter()
        .filter_map(|x| {
            let d = [f.deriv(&x, 0)?, f.deriv(&x, 1)?, f.deriv(&x, 2)?];
            d.iter().all(|v| v.is_finite()).then_some((x, d))
        })
        .collect()
}

/// Absolute scale from local constant returns: the mean elasticity sum on the region.
pub fn scale_from_crs(res: &Step3Result, region: &Region) -> Result<ScaleLink> {
    let pts = region_elasticities(&res.f, region);
    if pts.is_empty() {
        return Err(Error::OutsideSupport(
            "scale region holds no evaluable point".into(),
        ));
    }
    let b = pts.iter().map(|(_, d)| d.iter().sum::<f64>()).sum::<f64>() / pts.len() as f64;
    if !(b > 0.0) {
        return Err(Error::NonPositiveScale(format!(
            "elasticity sum {b} on the region"
        )));
    }
    Ok(ScaleLink {
        b_ratio: None,
        method: ScaleMethod::LocalCrs,
        b_t: Some(b),
        region: Some(*region),
        points: pts.len(),
        assumption_dependent: true,
    })
}

/// Every finite innovation, boundary firms included.
fn finite_eta(id: &Identified) -> Vec<f64> {
    id.control
        .eta
        .iter()
        .copied()
        .filter(|e| e.is_finite())
        .collect()
}

/// Ratio b_{t+1}/b_t between two identified periods.
pub fn scale_ratio(
    id_t: &Identified,
    id_t1: &Identified,
    method: ScaleMethod,
    region: &Region,
) -> Result<ScaleLink> {
    let (ratio, points) = match method {
        ScaleMethod::EtaVariance => {
            let (e0, e1) = (finite_eta(id_t), finite_eta(id_t1));
            let (_, s0) = mean_sd(&e0);
            let (_, s1) = mean_sd(&e1);
            if !(s0 > 0.0 && s1 > 0.0) {
                return Err(Error::DegenerateColumn("eta".into()));
            }
            (s1 / s0, e0.len().min(e1.len()))
        }
        ScaleMethod::ElasticityConstancy | ScaleMethod::ReturnsConstancy => {
            let a = region_elasticities(&id_t.step3.f, region);
            let b: HashMap<[u64; 3], [f64; 3]> = region_elasticities(&id_t1.step3.f, region)
                .into_iter()
                .map(|(x, d)| (x.map(f64::to_bits), d))
                .collect();
            let mut ratios = Vec::new();
            for (x, d0) in a {
                let Some(d1) = b.get(&x.map(f64::to_bits)) else {
                    continue;
                };
                if method == ScaleMethod::ReturnsConstancy {
                    ratios.push(d1.iter().sum::<f64>() / d0.iter().sum::<f64>());
                } else {
                    ratios.extend((0..3).map(|j| d1[j] / d0[j]));
                }
            }
            ratios.retain(|r| r.is_finite());
            if ratios.is_empty() {
                return Err(Error::OutsideSupport(
                    "scale region holds no point evaluable in both periods".into(),
                ));
            }
            (
                ratios.iter().sum::<f64>() / ratios.len() as f64,
                ratios.len(),
            )
        }
        ScaleMethod::LocalCrs => {
            let b0 = scale_from_crs(&id_t.step3, region)?
                .b_t
                .expect("absolute scale");
            let b1 = scale_from_crs(&id_t1.step3, region)?
                .b_t
                .expect("absolute scale");
            (b1 / b0, REGION_LATTICE.pow(3))
        }
    };
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::NonPositiveScale(format!("scale ratio {ratio}")));
    }
    Ok(ScaleLink {
        b_ratio: Some(ratio),
        method,
        b_t: None,
        region: (method != ScaleMethod::EtaVariance).then_some(*region),
        points,
        assumption_dependent: method == ScaleMethod::LocalCrs,
    })
}

/// Divides the control function, productivity, markups, elasticities, f and output by `b`;
/// prices follow from p = r̄ − y.
pub fn rescale(id: &Identified, b: f64) -> Result<Identified> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::NonPositiveScale(format!("scale {b}")));
    }
    let c = 1.0 / b;
    let mut out = id.clone();
    let ctl = &mut out.control;
    ctl.minv = ctl.minv.scaled(c);
    ctl.hbar = ctl.hbar.scaled(c);
    ctl.dh_anchor *= c;
    for v in [
        &mut ctl.omega,
        &mut ctl.hbar_i,
        &mut ctl.eta,
        &mut ctl.constants.c0,
        &mut ctl.constants.c2,
    ] {
        v.iter_mut().for_each(|x| *x *= c);
    }
    ctl.labor_slope = ctl.labor_slope.map(|s| s * c);
    let s3 = &mut out.step3;
    s3.markup.iter_mut().for_each(|x| *x *= c);
    s3.markup_fn = s3.markup_fn.scaled(c);
    s3.elasticity
        .iter_mut()
        .for_each(|e| e.iter_mut().for_each(|x| *x *= c));
    s3.elasticity_fn = s3.elasticity_fn.iter().map(|s| s.scaled(c)).collect();
    s3.f = s3.f.scaled(c);
    for i in 0..s3.f_i.len() {
        s3.f_i[i] *= c;
        s3.y[i] = s3.f_i[i] + ctl.omega[i];
        s3.p[i] = out.step1.rbar[i] - s3.y[i];
    }
    Ok(out)
}

/// Base-quantity-weighted price index Σ P₁Y₀ / Σ P₀Y₀ from log prices and log base quantities.
pub fn laspeyres(p_base: &[f64], y_base: &[f64], p_new: &[f64]) -> Result<f64> {
    if p_base.len() != y_base.len() || p_base.len() != p_new.len() || p_base.is_empty() {
        return Err(Error::InvalidStructure(
            "price index inputs must be equally long and nonempty".into(),
        ));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..p_base.len() {
        num += (p_new[i] + y_base[i]).exp();
        den += (p_base[i] + y_base[i]).exp();
    }
    Ok(num / den)
}

/// Reads a two-column (period, index) CSV.
pub fn read_price_index<R: Read>(rdr: R) -> Result<Vec<(i64, f64)>> {
    let mut r = csv::Reader::from_reader(rdr);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |j: usize, col: &str| -> Result<String> {
            rec.get(j)
                .map(str::trim)
                .map(str::to_string)
                .ok_or_else(|| Error::MissingColumn(col.into()))
        };
        let t = parse(0, "period")?
            .parse::<i64>()
            .map_err(|_| Error::NonFinite {
                column: "period".into(),
                row: row + 1,
            })?;
        let v = parse(1, "index")?
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite() && *v > 0.0)
            .ok_or(Error::NonFinite {
                column: "index".into(),
                row: row + 1,
            })?;
        out.push((t, v));
    }
    Ok(out)
}

/// Loads a price index series from a CSV file.
pub fn load_price_index(path: &Path) -> Result<Vec<(i64, f64)>> {
    read_price_index(std::fs::File::open(path)?)
}

/// Laspeyres index of every period from latent prices and quantities, based on the earliest period.
pub fn true_price_index(panel: &FirmPanel) -> Result<Vec<(i64, f64)>> {
    let truth = panel.truth.as_ref().ok_or_else(|| {
        Error::InvalidStructure("price index from truth needs latent columns".into())
    })?;
    let periods = panel.periods();
    let base = *periods
        .first()
        .ok_or_else(|| Error::ProductSet("empty panel".into()))?;
    let at_base: HashMap<&str, usize> = panel
        .rows_of(base)
        .into_iter()
        .map(|i| (panel.ids[i].as_str(), i))
        .collect();
    let mut out = Vec::with_capacity(periods.len());
    for t in periods {
        let (mut pb, mut yb, mut pn) = (vec![], vec![], vec![]);
        for j in panel.rows_of(t) {
            if let Some(&i) = at_base.get(panel.ids[j].as_str()) {
                if truth.p[i].is_finite() && truth.y[i].is_finite() && truth.p[j].is_finite() {
                    pb.push(truth.p[i]);
                    yb.push(truth.y[i]);
                    pn.push(truth.p[j]);
                }
            }
        }
        if pb.is_empty() {
            return Err(Error::ProductSet(format!(
                "no firm with latent prices in periods {base} and {t}"
            )));
        }
        out.push((t, laspeyres(&pb, &yb, &pn)?));
    }
    Ok(out)
}

/// Writes a two-column (period, index) CSV.
pub fn write_price_index<W: std::io::Write>(w: W, index: &[(i64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["period", "index"])?;
    for (t, v) in index {
        out.write_record([t.to_string(), crate::panel::fmt_f64(*v)])?;
    }
    out.flush()?;
    Ok(())
}

/// Location shifts between two periods and the implied per-firm growth rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationLink {
    /// Period whose quantities weight the price index.
    pub base_period: i64,
    pub period: i64,
    pub next_period: i64,
    /// Observed index relative to the base (period, next).
    pub p_star: (f64, f64),
    /// Index recomputed from identified prices and quantities (period, next).
    pub p_hat: (f64, f64),
    /// Change of the summed output and productivity location shifts.
    pub a12_diff: f64,
    /// Change of the production-function location shift.
    pub a1_diff: f64,
    pub a2_diff: f64,
    pub xbar: [f64; 3],
    /// Product set: firms with finite identified values in the base and both periods.
    pub ids: Vec<String>,
    pub y_growth: Vec<f64>,
    pub tfp_growth: Vec<f64>,
    pub p_growth: Vec<f64>,
    /// Growth of fitted log revenue.
    pub rbar_growth: Vec<f64>,
    /// Firms of the base period dropped from the product set.
    pub dropped: usize,
}

fn index_at(series: &[(i64, f64)], t: i64) -> Result<f64> {
    series
        .iter()
        .find(|(p, _)| *p == t)
        .map(|(_, v)| *v)
        .ok_or(Error::MissingPeriod(t))
}

fn positions(id: &Identified) -> HashMap<&str, usize> {
    id.ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect()
}

fn finite_at(id: &Identified, i: usize) -> bool {
    id.step3.y[i].is_finite() && id.step3.p[i].is_finite() && id.control.omega[i].is_finite()
}

/// Location link between two scale-normalized periods given an observed price index whose
/// base quantities come from `base`.
pub fn location_link(
    base: &Identified,
    id_t: &Identified,
    id_t1: &Identified,
    p_star: &[(i64, f64)],
    xbar: [f64; 3],
) -> Result<LocationLink> {
    let (pos_t, pos_t1) = (positions(id_t), positions(id_t1));
    let mut set = Vec::new();
    for (b, s) in base.ids.iter().enumerate() {
        let (Some(&i), Some(&j)) = (pos_t.get(s.as_str()), pos_t1.get(s.as_str())) else {
            continue;
        };
        if finite_at(base, b) && finite_at(id_t, i) && finite_at(id_t1, j) {
            set.push((b, i, j));
        }
    }
    if set.is_empty() {
        return Err(Error::ProductSet(
            "no firm has identified values in every period".into(),
        ));
    }
    let dropped = base.ids.len() - set.len();
    let (s0, a, b) = (&base.step3, &id_t.step3, &id_t1.step3);
    let p0: Vec<f64> = set.iter().map(|&(k, _, _)| s0.p[k]).collect();
    let y0: Vec<f64> = set.iter().map(|&(k, _, _)| s0.y[k]).collect();
    let pt: Vec<f64> = set.iter().map(|&(_, i, _)| a.p[i]).collect();
    let pt1: Vec<f64> = set.iter().map(|&(_, _, j)| b.p[j]).collect();
    let p_hat = (laspeyres(&p0, &y0, &pt)?, laspeyres(&p0, &y0, &pt1)?);
    let star0 = index_at(p_star, base.period)?;
    let ps = (
        index_at(p_star, id_t.period)? / star0,
        index_at(p_star, id_t1.period)? / star0,
    );
    let a12_diff = (ps.1 / ps.0).ln() - (p_hat.1 / p_hat.0).ln();
    let f_at = |g: &GridFn| {
        g.eval(&xbar).ok_or_else(|| {
            Error::OutsideSupport(format!(
                "fixed input point {xbar:?} outside the production grid"
            ))
        })
    };
    let a1_diff = f_at(&b.f)? - f_at(&a.f)?;
    let a2_diff = a12_diff - a1_diff;
    let mut link = LocationLink {
        base_period: base.period,
        period: id_t.period,
        next_period: id_t1.period,
        p_star: ps,
        p_hat,
        a12_diff,
        a1_diff,
        a2_diff,
        xbar,
        ids: Vec::with_capacity(set.len()),
        y_growth: Vec::with_capacity(set.len()),
        tfp_growth: Vec::with_capacity(set.len()),
        p_growth: Vec::with_capacity(set.len()),
        rbar_growth: Vec::with_capacity(set.len()),
        dropped,
    };
    for &(_, i, j) in &set {
        let rg = id_t1.step1.rbar[j] - id_t.step1.rbar[i];
        let pg = b.p[j] - a.p[i] + a12_diff;
        link.ids.push(id_t.ids[i].clone());
        link.rbar_growth.push(rg);
        link.p_growth.push(pg);
        link.y_growth.push(rg - pg);
        link.tfp_growth
            .push(id_t1.control.omega[j] - id_t.control.omega[i] - a2_diff);
    }
    Ok(link)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_product_index_is_price_ratio() {
        let v = laspeyres(&[0.0], &[3.0], &[2f64.ln()]).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
    }

    #[test]
    fn index_is_homogeneous_in_new_prices() {
        let p0 = [0.1, -0.2, 0.3];
        let y0 = [1.0, 2.0, 0.5];
        let p1 = [0.2, 0.0, 0.1];
        let base = laspeyres(&p0, &y0, &p1).unwrap();
        let doubled: Vec<f64> = p1.iter().map(|p| p + 2f64.ln()).collect();
        assert!((laspeyres(&p0, &y0, &doubled).unwrap() - 2.0 * base).abs() < 1e-12);
    }

    #[test]
    fn index_csv_round_trip() {
        let s = "period,index\n1,1.0\n2,1.25\n";
        let v = read_price_index(s.as_bytes()).unwrap();
        assert_eq!(v, vec![(1, 1.0), (2, 1.25)]);
        assert!(read_price_index("period,index\n1,-1\n".as_bytes()).is_err());
    }

    #[test]
    fn lattice_spans_the_box() {
        let r = Region {
            lo: [0.0, 1.0, 2.0],
            hi: [1.0, 2.0, 4.0],
        };
        let pts = r.lattice(3);
        assert_eq!(pts.len(), 27);
        assert_eq!(pts[0], [0.0, 1.0, 2.0]);
        assert_eq!(pts[26], [1.0, 2.0, 4.0]);
    }

    #[test]
    fn crs_scale_of_a_linear_technology() {
        let axes = vec![vec![-1.0, 0.0, 1.0]; 3];
        let names = vec!["m".to_string(), "k".to_string(), "l".to_string()];
        let f = GridFn::from_fn(names, axes, |x| 0.7 * x[0] + 0.5 * x[1] + 0.8 * x[2]).unwrap();
        let r = Region {
            lo: [-0.5; 3],
            hi: [0.5; 3],
        };
        let pts = region_elasticities(&f, &r);
        assert_eq!(pts.len(), 125);
        let sum = pts.iter().map(|(_, d)| d.iter().sum::<f64>()).sum::<f64>() / pts.len() as f64;
        assert!((sum - 2.0).abs() < 1e-12);
    }
}
