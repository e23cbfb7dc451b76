//! Execution of each mode and the artifacts it writes.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{DgpConfig, Mode, RunConfig};
use super::{Summary, SummaryRow, Table};
use crate::demand::build_hsa;
use crate::dgp::rng::{child_seed, tag};
use crate::dgp::{
    oracle_identified, simulate_ces, simulate_hsa, OracleIdentified, OracleNormalization,
    TrueStructure,
};
use crate::error::{Error, Result, ResultExt};
use crate::ident::overid::correlation;
use crate::ident::{identify, overid_check, IdentOptions, Identified};
use crate::nonpar::bandwidth::mean_sd;
use crate::norm::{
    location_link, pooled_median, rescale, scale_from_crs, scale_ratio, Region, ScaleMethod,
};
use crate::panel::{fmt_f64, make_pair, read_csv, FirmPanel, PanelPair};

/// Run manifest written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub mode: Mode,
    pub version: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; the only field that differs between identical runs.
    pub timestamp: u64,
    pub config: RunConfig,
    /// Resolved design parameters of every module.
    pub design: BTreeMap<String, Value>,
    /// Per-period resolved estimation choices.
    pub periods: Vec<Value>,
    /// Files written, relative to the results directory.
    pub artifacts: Vec<String>,
}

/// Result of a run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub out: PathBuf,
    pub summary: Summary,
    pub manifest: Manifest,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
    artifacts: Vec<String>,
    periods: Vec<Value>,
}

impl Ctx<'_> {
    fn create(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        self.artifacts.push(rel.to_string());
        Ok(BufWriter::new(File::create(path)?))
    }

    fn write_json<T: Serialize>(&mut self, rel: &str, v: &T) -> Result<()> {
        let w = self.create(rel)?;
        serde_json::to_writer_pretty(w, v)?;
        Ok(())
    }
}

/// Executes `mode` and writes its artifacts under `out`.
pub fn run(cfg: &RunConfig, mode: Mode, out: &Path) -> Result<RunOutcome> {
    cfg.validate(mode)?;
    if mode == Mode::Report {
        return Err(Error::Config {
            field: "mode".into(),
            message: "report reads an existing results directory".into(),
        });
    }
    fs::create_dir_all(out)?;
    let mut ctx = Ctx {
        cfg,
        out,
        artifacts: vec![],
        periods: vec![],
    };
    let summary = match mode {
        Mode::Simulate => simulate_mode(&mut ctx)?,
        Mode::Identify => identify_mode(&mut ctx)?,
        Mode::Normalize => normalize_mode(&mut ctx)?,
        Mode::Demand => demand_mode(&mut ctx)?,
        Mode::Montecarlo => montecarlo_mode(&mut ctx)?,
        Mode::Report => unreachable!(),
    };
    ctx.write_json("summary.json", &summary)?;
    ctx.artifacts.push("manifest.json".into());
    let manifest = Manifest {
        mode,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        timestamp: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config: cfg.clone(),
        design: design_params(cfg),
        periods: std::mem::take(&mut ctx.periods),
        artifacts: ctx.artifacts.clone(),
    };
    serde_json::to_writer_pretty(
        BufWriter::new(File::create(out.join("manifest.json"))?),
        &manifest,
    )?;
    Ok(RunOutcome {
        out: out.to_path_buf(),
        summary,
        manifest,
    })
}

/// Every design parameter that shapes the results.
pub fn design_params(cfg: &RunConfig) -> BTreeMap<String, Value> {
    let e = &cfg.estimation;
    let n = &cfg.normalization;
    let mut d = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        d.insert(k.to_string(), v);
    };
    put("panel.schema", json!(cfg.io.schema));
    put("panel.max_z_levels", json!(cfg.io.max_z_levels));
    put(
        "panel.missing_values",
        json!("rows with an empty required cell are dropped and counted"),
    );
    put("panel.min_pair_rows", json!(cfg.io.min_pair_rows));
    put("dgp.initial_productivity", json!("stationary AR(1) law"));
    put("dgp.hsa_foc_tol", json!(crate::dgp::FOC_TOL));
    put("dgp.hsa_aggregator_tol", json!(crate::dgp::AGGREGATOR_TOL));
    put(
        "dgp.rng",
        json!("ChaCha8 streams keyed by (seed, substream, firm, period)"),
    );
    put("nonpar.kernel", json!("gaussian"));
    put("nonpar.discrete_shifter", json!("exact cell conditioning"));
    put(
        "nonpar.grid",
        json!({
            "points": e.grid_points,
            "points_continuous": e.grid_points_continuous,
            "lag_points": e.lag_grid_points,
            "trim": e.trim,
        }),
    );
    put(
        "nonpar.bandwidths",
        json!({
            "revenue": e.revenue_bandwidth,
            "cdf": e.cdf_bandwidth,
            "cdf_response": e.cdf_response_bandwidth,
        }),
    );
    put("nonpar.density_floor", json!(e.density_floor));
    put("nonpar.min_ess", json!(e.min_ess));
    put("nonpar.integration_tol", json!(e.integration_tol));
    put("ident.normalization", json!(e.norm));
    put(
        "ident.reference_shifter",
        json!("lowest level when discrete, median when continuous"),
    );
    put("ident.anchor_candidates", json!(e.anchor_candidates));
    put("ident.anchor_quantiles", json!(e.anchor_quantiles));
    put(
        "ident.anchor_tie_break",
        json!("largest minimum |slope|·sd, then candidate order"),
    );
    put("ident.min_t", json!(e.min_t));
    put("ident.min_cell_rows", json!(e.min_cell_rows));
    put(
        "ident.boundary_firms",
        json!("flagged; control and production functions extrapolated linearly"),
    );
    put(
        "ident.nonpositive_markup_denominator",
        json!("flagged and excluded"),
    );
    put(
        "ident.labor",
        json!({ "options": e.labor, "form": "affine in labor, linear IV" }),
    );
    put("ident.overid_threshold", json!(e.overid_threshold));
    put("norm.region", json!(n.region));
    put("norm.region_lattice", json!(crate::norm::REGION_LATTICE));
    put(
        "norm.precedence",
        json!(if n.crs {
            "local constant returns fixes each scale; ratios are diagnostics"
        } else {
            "scales chained by the innovation-variance ratio"
        }),
    );
    put("norm.ratio_methods", json!(n.ratio_methods));
    put("norm.laspeyres_base", json!("earliest identified period"));
    put(
        "norm.product_set",
        json!("firms with identified values in the base and both linked periods"),
    );
    put(
        "norm.xbar",
        n.xbar
            .map_or(json!("pooled median input vector"), |x| json!(x)),
    );
    put(
        "demand.lower_limit",
        json!("c_i = Y0_i, the data-point quantity"),
    );
    put(
        "demand.extrapolation",
        json!("linear in ln Y with the boundary slope, flagged"),
    );
    put(
        "demand.bracket",
        json!("[min(ln Y - max support), max(ln Y - min support)] expanded geometrically"),
    );
    put("demand.options", json!(cfg.demand.options));
    put("cli.config_format", json!("TOML, or JSON"));
    put(
        "cli.replication_seeds",
        json!("replication r uses child_seed(seed, REPLICATION, r)"),
    );
    d
}

/// Simulates the configured process with `seed`.
pub fn simulate_panel(dgp: &DgpConfig, seed: u64) -> Result<FirmPanel> {
    match dgp {
        DgpConfig::Ces {
            n_firms,
            n_periods,
            structure,
        } => simulate_ces(structure, *n_firms, *n_periods, seed),
        DgpConfig::Hsa {
            n_firms,
            n_periods,
            share,
            production,
        } => simulate_hsa(share, production, *n_firms, *n_periods, seed),
    }
    .ctx("dgp", "simulate")
}

fn obtain_panel(cfg: &RunConfig) -> Result<FirmPanel> {
    match &cfg.io.panel {
        Some(path) => {
            let p = read_csv(File::open(path)?, &cfg.io.schema, cfg.io.max_z_levels)
                .ctx("panel", "load_csv")?;
            if p.dropped > 0 {
                log::warn!("dropped {} rows with missing required cells", p.dropped);
            }
            Ok(p)
        }
        None => simulate_panel(cfg.dgp.as_ref().expect("validated dgp"), cfg.seed),
    }
}

fn target_periods(cfg: &RunConfig, panel: &FirmPanel) -> Vec<i64> {
    if cfg.io.periods.is_empty() {
        panel.periods().into_iter().skip(1).collect()
    } else {
        cfg.io.periods.clone()
    }
}

fn simulated_structure(cfg: &RunConfig) -> Option<&TrueStructure> {
    match (&cfg.io.panel, &cfg.dgp) {
        (None, Some(DgpConfig::Ces { structure, .. })) => Some(structure),
        _ => None,
    }
}

fn identify_all(
    ctx: &mut Ctx,
    panel: &FirmPanel,
    periods: Vec<i64>,
) -> Result<Vec<(PanelPair, Identified)>> {
    let mut out = Vec::new();
    for t in periods {
        let pair = make_pair(panel, t, ctx.cfg.io.min_pair_rows).ctx("panel", "make_pair")?;
        log::info!("identifying period {t} from {} firms", pair.len());
        let id = identify(&pair, &ctx.cfg.estimation).ctx("ident", "identify")?;
        ctx.periods.push(period_record(&pair, &id));
        out.push((pair, id));
    }
    if out.is_empty() {
        return Err(Error::InvalidStructure(
            "no period with a predecessor to identify".into(),
        ));
    }
    Ok(out)
}

fn period_record(pair: &PanelPair, id: &Identified) -> Value {
    let a = &id.control.parts.anchor;
    json!({
        "period": id.period,
        "rows": pair.len(),
        "attrition": pair.attrition,
        "z_discrete": pair.z_discrete,
        "normalization_points": id.norm,
        "anchor": { "component": a.component.name(), "point": a.point, "score": a.score, "min_t": a.min_t },
        "revenue_bandwidths": id.step1.bandwidths,
        "widened_nodes": id.step1.widened,
        "unusable_nodes": id.control.parts.unusable_nodes,
        "nonmonotone_nodes": id.control.parts.nonmonotone_nodes,
        "unreached_nodes": id.control.parts.unreached_nodes,
        "labor_endogenous": id.control.parts.labor_endogenous,
    })
}

fn usable(id: &Identified) -> Vec<usize> {
    (0..id.ids.len())
        .filter(|&i| id.step3.flags[i].usable() && id.step3.markup[i].is_finite())
        .collect()
}

fn mean_of(rows: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    rows.iter().map(|&i| f(i)).sum::<f64>() / rows.len() as f64
}

fn levels_of(id: &Identified) -> Vec<f64> {
    id.step1.phi.levels.clone()
}

fn oracle_for(ts: &TrueStructure, id: &Identified) -> OracleIdentified {
    let levels = if id.step1.phi.is_discrete() {
        levels_of(id)
    } else {
        vec![id.norm.z]
    };
    oracle_identified(
        ts,
        &levels,
        OracleNormalization::Points {
            m0: id.norm.m0,
            m1: id.norm.m1,
            z: id.norm.z,
        },
    )
}

fn write_firms(ctx: &mut Ctx, rel: &str, pair: &PanelPair, id: &Identified) -> Result<()> {
    let mut w = csv::Writer::from_writer(ctx.create(rel)?);
    let mut header: Vec<&str> = vec![
        "id",
        "z",
        "m",
        "k",
        "l",
        "rbar",
        "omega",
        "eta",
        "markup",
        "el_m",
        "el_k",
        "el_l",
        "f",
        "y",
        "p",
        "share",
        "dlw",
        "interior",
        "extrapolated",
        "bad_denominator",
    ];
    if pair.truth.is_some() {
        header.extend(["true_omega", "true_markup", "true_y", "true_p"]);
    }
    w.write_record(&header)?;
    let (c, s3) = (&id.control, &id.step3);
    for i in 0..pair.len() {
        let mut row = vec![id.ids[i].clone()];
        let nums = [
            pair.z[i],
            pair.m[i],
            pair.k[i],
            pair.l[i],
            id.step1.rbar[i],
            c.omega[i],
            c.eta[i],
            s3.markup[i],
            s3.elasticity[i][0],
            s3.elasticity[i][1],
            s3.elasticity[i][2],
            s3.f_i[i],
            s3.y[i],
            s3.p[i],
            s3.share[i],
            s3.dlw[i],
        ];
        row.extend(nums.iter().map(|v| fmt_f64(*v)));
        let fl = s3.flags[i];
        row.extend(
            [fl.interior, fl.extrapolated, fl.bad_denominator]
                .iter()
                .map(|b| (*b as u8).to_string()),
        );
        if let Some(t) = &pair.truth {
            row.extend(
                [t.omega[i], t.markup[i], t.y[i], t.p[i]]
                    .iter()
                    .map(|v| fmt_f64(*v)),
            );
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_grids(ctx: &mut Ctx, id: &Identified) -> Result<()> {
    let t = id.period;
    id.step1
        .phi
        .write_csv(ctx.create(&format!("grids/phi_t{t}.csv"))?, "phi")?;
    id.control
        .minv
        .write_csv(ctx.create(&format!("grids/minv_t{t}.csv"))?, "minv")?;
    id.step3
        .markup_fn
        .write_csv(ctx.create(&format!("grids/markup_t{t}.csv"))?, "markup")?;
    id.step3
        .f
        .write_csv(ctx.create(&format!("grids/f_t{t}.csv"))?)?;
    Ok(())
}

/// Recovery table of one identified period; `scale` divides identified magnitudes.
/// Markups of a scale-normalized period are compared with latent markups, otherwise with the oracle.
fn period_table(
    cfg: &RunConfig,
    pair: &PanelPair,
    id: &Identified,
    scale: Option<f64>,
    normalized: bool,
) -> Table {
    let rows = usable(id);
    let mut out = Vec::new();
    let oracle = simulated_structure(cfg)
        .filter(|_| !normalized)
        .map(|ts| (ts, oracle_for(ts, id)));
    let s3 = &id.step3;
    out.push(SummaryRow::new(
        "usable_share",
        None,
        rows.len() as f64 / id.ids.len().max(1) as f64,
    ));
    if rows.is_empty() {
        return Table {
            title: format!("period {}", id.period),
            rows: out,
        };
    }
    let levels = levels_of(id);
    if levels.is_empty() {
        let truth = pair
            .truth
            .as_ref()
            .filter(|_| normalized)
            .map(|t| mean_of(&rows, |i| t.markup[i]));
        out.push(SummaryRow::new(
            "markup",
            truth,
            mean_of(&rows, |i| s3.markup[i]),
        ));
    }
    for (j, &lv) in levels.iter().enumerate() {
        let cell: Vec<usize> = rows.iter().copied().filter(|&i| id.z[i] == lv).collect();
        if cell.is_empty() {
            continue;
        }
        let truth = if normalized {
            pair.truth.as_ref().map(|t| mean_of(&cell, |i| t.markup[i]))
        } else {
            oracle.as_ref().map(|(_, o)| o.markup[j])
        };
        out.push(SummaryRow::new(
            format!("markup[z={lv}]"),
            truth,
            mean_of(&cell, |i| s3.markup[i]),
        ));
    }
    if let Some(b) = scale {
        out.push(SummaryRow::new(
            "crs_scale",
            oracle.as_ref().map(|(_, o)| o.crs_scale),
            b,
        ));
        let groups: Vec<(String, Vec<usize>)> = if levels.is_empty() {
            vec![("markup_crs".to_string(), rows.clone())]
        } else {
            levels
                .iter()
                .map(|&lv| {
                    (
                        format!("markup_crs[z={lv}]"),
                        rows.iter().copied().filter(|&i| id.z[i] == lv).collect(),
                    )
                })
                .collect()
        };
        for (name, cell) in groups.into_iter().filter(|(_, c)| !c.is_empty()) {
            let truth = pair.truth.as_ref().map(|t| mean_of(&cell, |i| t.markup[i]));
            out.push(SummaryRow::new(
                name,
                truth,
                mean_of(&cell, |i| s3.markup[i] / b),
            ));
        }
        let total = oracle
            .as_ref()
            .map(|(ts, _)| ts.theta_m + ts.theta_k + ts.theta_l);
        for (a, name) in ["elasticity_m_crs", "elasticity_k_crs", "elasticity_l_crs"]
            .iter()
            .enumerate()
        {
            let truth = oracle
                .as_ref()
                .map(|(ts, _)| [ts.theta_m, ts.theta_k, ts.theta_l][a] / total.unwrap());
            out.push(SummaryRow::new(
                *name,
                truth,
                mean_of(&rows, |i| s3.elasticity[i][a] / b),
            ));
        }
    }
    if let Some(t) = &pair.truth {
        let est: Vec<f64> = rows.iter().map(|&i| id.control.omega[i]).collect();
        let tru: Vec<f64> = rows.iter().map(|&i| t.omega[i]).collect();
        out.push(SummaryRow::new(
            "tfp_corr",
            Some(1.0),
            correlation(&est, &tru),
        ));
    }
    let dev = rows
        .iter()
        .map(|&i| (s3.dlw[i] - 1.0).abs())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    out.push(SummaryRow::new("dlw_max_abs_dev", Some(0.0), dev));
    Table {
        title: format!("period {}", id.period),
        rows: out,
    }
}

fn simulate_mode(ctx: &mut Ctx) -> Result<Summary> {
    let panel = simulate_panel(ctx.cfg.dgp.as_ref().expect("validated dgp"), ctx.cfg.seed)?;
    panel.write_csv(ctx.create("panel.csv")?)?;
    let index = crate::norm::true_price_index(&panel)?;
    crate::norm::write_price_index(ctx.create("price_index.csv")?, &index)?;
    let mut rows = vec![SummaryRow::new("rows", None, panel.len() as f64)];
    for (t, n) in panel.rows_per_period() {
        rows.push(SummaryRow::new(format!("rows[t={t}]"), None, n as f64));
    }
    for (t, v) in &index {
        rows.push(SummaryRow::new(format!("price_index[t={t}]"), None, *v));
    }
    Ok(Summary {
        mode: Mode::Simulate,
        tables: vec![Table {
            title: "panel".into(),
            rows,
        }],
        details: json!({ "z_discrete": panel.z_discrete, "periods": panel.periods() }),
    })
}

fn identify_mode(ctx: &mut Ctx) -> Result<Summary> {
    let panel = obtain_panel(ctx.cfg)?;
    let all = identify_all(ctx, &panel, target_periods(ctx.cfg, &panel))?;
    let pairs: Vec<&PanelPair> = all.iter().map(|(p, _)| p).collect();
    let region = ctx.cfg.normalization.region.resolve(&pairs)?;
    let mut tables = Vec::new();
    let mut details = Vec::new();
    for (pair, id) in &all {
        write_firms(ctx, &format!("firms_t{}.csv", id.period), pair, id)?;
        write_grids(ctx, id)?;
        let b = scale_from_crs(&id.step3, &region).ok().and_then(|s| s.b_t);
        tables.push(period_table(ctx.cfg, pair, id, b, false));
        let overid = if ctx.cfg.overid {
            Some(
                overid_check(pair, &id.control.parts.scan, &id.norm, &ctx.cfg.estimation)
                    .ctx("ident", "overid_check")?,
            )
        } else {
            None
        };
        if let Some(r) = &overid {
            tables.push(Table {
                title: format!("over-identification, period {}", id.period),
                rows: vec![SummaryRow::new(
                    "max_discrepancy",
                    Some(0.0),
                    r.max_discrepancy,
                )],
            });
        }
        details.push(json!({
            "period": id.period,
            "anchor_scan": id.control.parts.scan,
            "overid": overid,
            "labor": id.labor.as_ref().map(|l| json!({
                "theta_l": l.theta_l,
                "theta_l_se": l.theta_l_se,
                "ols_theta_l": l.ols_theta_l,
                "first_stage_f": l.first_stage_f,
                "rows": l.rows,
            })),
        }));
    }
    Ok(Summary {
        mode: Mode::Identify,
        tables,
        details: Value::Array(details),
    })
}

/// Absolute scale per period: local constant returns, or the innovation-variance chain.
fn period_scales(cfg: &RunConfig, ids: &[&Identified], region: &Region) -> Result<Vec<f64>> {
    if cfg.normalization.crs {
        ids.iter()
            .map(|id| {
                Ok(scale_from_crs(&id.step3, region)
                    .ctx("norm", "scale_from_crs")?
                    .b_t
                    .expect("absolute scale"))
            })
            .collect()
    } else {
        let mut out = vec![1.0];
        for w in ids.windows(2) {
            let r = scale_ratio(w[0], w[1], ScaleMethod::EtaVariance, region)
                .ctx("norm", "scale_ratio")?;
            out.push(out.last().expect("scale") * r.b_ratio.expect("ratio"));
        }
        Ok(out)
    }
}

fn truth_by_id(pair: &PanelPair) -> Option<HashMap<&str, (f64, f64)>> {
    pair.truth.as_ref().map(|t| {
        pair.ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), (t.y[i], t.omega[i])))
            .collect()
    })
}

fn normalize_mode(ctx: &mut Ctx) -> Result<Summary> {
    let panel = obtain_panel(ctx.cfg)?;
    let all = identify_all(ctx, &panel, target_periods(ctx.cfg, &panel))?;
    let pairs: Vec<&PanelPair> = all.iter().map(|(p, _)| p).collect();
    let ids: Vec<&Identified> = all.iter().map(|(_, id)| id).collect();
    let n = &ctx.cfg.normalization;
    let region = n.region.resolve(&pairs)?;
    let scales = period_scales(ctx.cfg, &ids, &region)?;
    let mut ratios = Vec::new();
    for w in ids.windows(2) {
        for &m in &n.ratio_methods {
            let r = scale_ratio(w[0], w[1], m, &region).ctx("norm", "scale_ratio")?;
            ratios.push(json!({ "period": w[0].period, "next_period": w[1].period, "method": m, "b_ratio": r.b_ratio }));
        }
    }
    let rescaled: Vec<Identified> = ids
        .iter()
        .zip(&scales)
        .map(|(id, &b)| rescale(id, b))
        .collect::<Result<_>>()
        .ctx("norm", "rescale")?;
    let mut tables = Vec::new();
    for ((pair, _), (r, &b)) in all.iter().zip(rescaled.iter().zip(&scales)) {
        write_firms(ctx, &format!("firms_t{}.csv", r.period), pair, r)?;
        let mut t = period_table(ctx.cfg, pair, r, None, true);
        t.rows.insert(0, SummaryRow::new("scale", None, b));
        tables.push(t);
    }
    let mut links = Vec::new();
    if let Some(path) = &n.p_star {
        let p_star = crate::norm::load_price_index(path).ctx("norm", "read_price_index")?;
        let xbar = n.xbar.unwrap_or_else(|| pooled_median(&pairs));
        for k in 0..rescaled.len().saturating_sub(1) {
            let link = location_link(&rescaled[0], &rescaled[k], &rescaled[k + 1], &p_star, xbar)
                .ctx("norm", "location_link")?;
            let (t0, t1) = (truth_by_id(pairs[k]), truth_by_id(pairs[k + 1]));
            let mut w =
                csv::Writer::from_writer(ctx.create(&format!("growth_t{}.csv", link.next_period))?);
            let mut header = vec!["id", "y_growth", "tfp_growth", "p_growth", "rbar_growth"];
            if t0.is_some() && t1.is_some() {
                header.extend(["y_growth_true", "tfp_growth_true"]);
            }
            w.write_record(&header)?;
            let mut abs_err = (0.0, 0usize);
            for (j, id) in link.ids.iter().enumerate() {
                let mut row = vec![id.clone()];
                row.extend(
                    [
                        link.y_growth[j],
                        link.tfp_growth[j],
                        link.p_growth[j],
                        link.rbar_growth[j],
                    ]
                    .iter()
                    .map(|v| fmt_f64(*v)),
                );
                if let (Some(a), Some(b)) = (&t0, &t1) {
                    let (ya, oa) = a[id.as_str()];
                    let (yb, ob) = b[id.as_str()];
                    row.push(fmt_f64(yb - ya));
                    row.push(fmt_f64(ob - oa));
                    abs_err.0 += (link.tfp_growth[j] - (ob - oa)).abs();
                    abs_err.1 += 1;
                }
                w.write_record(&row)?;
            }
            w.flush()?;
            let mut rows = vec![
                SummaryRow::new("a12_diff", None, link.a12_diff),
                SummaryRow::new("a1_diff", None, link.a1_diff),
                SummaryRow::new("a2_diff", None, link.a2_diff),
                SummaryRow::new(
                    "ln_price_index_growth",
                    Some((link.p_star.1 / link.p_star.0).ln()),
                    (link.p_hat.1 / link.p_hat.0).ln(),
                ),
                SummaryRow::new(
                    "mean_tfp_growth",
                    None,
                    mean_of(&(0..link.ids.len()).collect::<Vec<_>>(), |j| {
                        link.tfp_growth[j]
                    }),
                ),
            ];
            if abs_err.1 > 0 {
                rows.push(SummaryRow::new(
                    "tfp_growth_mean_abs_error",
                    Some(0.0),
                    abs_err.0 / abs_err.1 as f64,
                ));
            }
            tables.push(Table {
                title: format!("location link {} to {}", link.period, link.next_period),
                rows,
            });
            links.push(json!({
                "base_period": link.base_period,
                "period": link.period,
                "next_period": link.next_period,
                "p_star": link.p_star,
                "p_hat": link.p_hat,
                "a12_diff": link.a12_diff,
                "a1_diff": link.a1_diff,
                "a2_diff": link.a2_diff,
                "xbar": link.xbar,
                "firms": link.ids.len(),
                "dropped": link.dropped,
            }));
        }
    }
    let periods: Vec<i64> = ids.iter().map(|id| id.period).collect();
    Ok(Summary {
        mode: Mode::Normalize,
        tables,
        details: json!({ "periods": periods, "scales": scales, "region": region, "ratios": ratios, "links": links }),
    })
}

fn read_counterfactual(path: &Path) -> Result<Vec<(String, f64, f64)>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let h = r.headers()?.clone();
    let col = |name: &str| {
        h.iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::MissingColumn(name.into()))
    };
    let (ci, cy, cz) = (col("firm_id")?, col("Y")?, col("z")?);
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |c: usize, name: &str| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or(Error::NonFinite {
                    column: name.into(),
                    row: row + 1,
                })
        };
        out.push((
            rec.get(ci).unwrap_or("").to_string(),
            num(cy, "Y")?,
            num(cz, "z")?,
        ));
    }
    Ok(out)
}

/// Periods needed by the demand mode: the chosen one alone when its scale is fixed locally.
fn demand_periods(cfg: &RunConfig, panel: &FirmPanel) -> Vec<i64> {
    let all = target_periods(cfg, panel);
    match (cfg.normalization.crs, cfg.demand.period) {
        (true, Some(t)) => vec![t],
        (true, None) => all.last().map(|t| vec![*t]).unwrap_or_default(),
        (false, _) => all,
    }
}

fn demand_mode(ctx: &mut Ctx) -> Result<Summary> {
    let panel = obtain_panel(ctx.cfg)?;
    let all = identify_all(ctx, &panel, demand_periods(ctx.cfg, &panel))?;
    let pairs: Vec<&PanelPair> = all.iter().map(|(p, _)| p).collect();
    let ids: Vec<&Identified> = all.iter().map(|(_, id)| id).collect();
    let region = ctx.cfg.normalization.region.resolve(&pairs)?;
    let scales = period_scales(ctx.cfg, &ids, &region)?;
    let k = match ctx.cfg.demand.period {
        Some(t) => ids
            .iter()
            .position(|id| id.period == t)
            .ok_or(Error::MissingPeriod(t))?,
        None => ids.len() - 1,
    };
    let id = rescale(ids[k], scales[k]).ctx("norm", "rescale")?;
    let sys = build_hsa(&id, &ctx.cfg.demand.options).ctx("demand", "build_hsa")?;
    for (j, g) in sys.revenue.grids.iter().enumerate() {
        let name = match sys.revenue.levels.get(j) {
            Some(lv) => format!("grids/revenue_t{}_z{lv}.csv", id.period),
            None => format!("grids/revenue_t{}.csv", id.period),
        };
        g.write_csv(ctx.create(&name)?)?;
    }
    let ev = sys
        .evaluate(&sys.u0, &sys.z0)
        .ctx("demand", "solve_aggregator")?;
    let share_sum: f64 = ev.shares.iter().sum();
    let mut rows = vec![
        SummaryRow::new("aggregator_at_data", Some(1.0), ev.aggregator.a),
        SummaryRow::new("share_sum_at_data", Some(1.0), share_sum),
        SummaryRow::new("ln_utility_at_data", None, ev.ln_utility),
        SummaryRow::new("max_price_gap", Some(0.0), sys.checks.max_price_gap),
        SummaryRow::new(
            "off_manifold_violations",
            Some(0.0),
            sys.checks.off_manifold_violations.len() as f64,
        ),
    ];
    if !sys.checks.off_manifold_violations.is_empty() {
        log::warn!(
            "{} off-manifold share-condition violations",
            sys.checks.off_manifold_violations.len()
        );
    }
    let mut cf = Value::Null;
    if let Some(path) = &ctx.cfg.demand.counterfactual {
        let query = read_counterfactual(path).ctx("demand", "counterfactual")?;
        let (u, z) = sys.counterfactual(&query)?;
        let e = sys.evaluate(&u, &z).ctx("demand", "inverse_demand")?;
        let pos: HashMap<&str, usize> = sys
            .ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let mut w = csv::Writer::from_writer(ctx.create("counterfactual.csv")?);
        w.write_record(["firm_id", "Y", "z", "P", "share", "A", "ln_U"])?;
        for (fid, y, zq) in &query {
            let i = pos[fid.as_str()];
            w.write_record([
                fid.clone(),
                fmt_f64(*y),
                fmt_f64(*zq),
                fmt_f64(e.prices[i]),
                fmt_f64(e.shares[i]),
                fmt_f64(e.aggregator.a),
                fmt_f64(e.ln_utility),
            ])?;
        }
        w.flush()?;
        rows.push(SummaryRow::new(
            "aggregator_counterfactual",
            None,
            e.aggregator.a,
        ));
        rows.push(SummaryRow::new(
            "ln_utility_counterfactual",
            None,
            e.ln_utility,
        ));
        cf = json!({ "rows": query.len(), "aggregator": e.aggregator, "ln_utility": e.ln_utility });
    }
    Ok(Summary {
        mode: Mode::Demand,
        tables: vec![Table {
            title: format!("demand system, period {}", id.period),
            rows,
        }],
        details: json!({
            "period": id.period,
            "scale": scales[k],
            "budget": sys.budget,
            "firms": sys.len(),
            "checks": sys.checks,
            "aggregator": ev.aggregator,
            "counterfactual": cf,
        }),
    })
}

/// Recovery statistics of one Monte Carlo replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub levels: Vec<f64>,
    /// Mean scale-normalized markup per shifter level.
    pub markup: Vec<f64>,
    /// Mean scale-normalized markup minus mean true markup per level.
    pub markup_error: Vec<f64>,
    pub elasticity: [f64; 3],
    pub tfp_corr: f64,
    pub crs_scale: f64,
}

/// Simulates, identifies and scale-normalizes one replication.
pub fn replicate(
    ts: &TrueStructure,
    opts: &IdentOptions,
    region: &crate::norm::RegionSpec,
    n_firms: usize,
    n_periods: usize,
    index: usize,
    seed: u64,
) -> Result<Replication> {
    let panel = simulate_ces(ts, n_firms, n_periods, seed)?;
    let t = *panel.periods().last().expect("period");
    let pair = make_pair(&panel, t, 1)?;
    let id = identify(&pair, opts)?;
    let reg = region.resolve(&[&pair])?;
    let b = scale_from_crs(&id.step3, &reg)?
        .b_t
        .expect("absolute scale");
    let rows = usable(&id);
    let truth = pair.truth.as_ref().expect("simulated truth");
    let levels = if id.step1.phi.is_discrete() {
        levels_of(&id)
    } else {
        vec![f64::NAN]
    };
    let mut markup = Vec::new();
    let mut markup_error = Vec::new();
    for &lv in &levels {
        let cell: Vec<usize> = rows
            .iter()
            .copied()
            .filter(|&i| lv.is_nan() || id.z[i] == lv)
            .collect();
        let est = mean_of(&cell, |i| id.step3.markup[i] / b);
        markup.push(est);
        markup_error.push(est - mean_of(&cell, |i| truth.markup[i]));
    }
    let el = [0, 1, 2].map(|a| mean_of(&rows, |i| id.step3.elasticity[i][a] / b));
    let est: Vec<f64> = rows.iter().map(|&i| id.control.omega[i]).collect();
    let tru: Vec<f64> = rows.iter().map(|&i| truth.omega[i]).collect();
    Ok(Replication {
        index,
        seed,
        levels,
        markup,
        markup_error,
        elasticity: el,
        tfp_corr: correlation(&est, &tru),
        crs_scale: b,
    })
}

fn montecarlo_mode(ctx: &mut Ctx) -> Result<Summary> {
    let Some(DgpConfig::Ces {
        n_firms,
        n_periods,
        structure,
    }) = &ctx.cfg.dgp
    else {
        unreachable!("validated ces dgp")
    };
    let cfg = ctx.cfg;
    let reps: Vec<Result<Replication>> = (0..cfg.montecarlo.replications)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(cfg.seed, tag::REPLICATION, r as u64);
            replicate(
                structure,
                &cfg.estimation,
                &cfg.normalization.region,
                *n_firms,
                *n_periods,
                r,
                seed,
            )
            .map_err(|e| e.context("cli", "montecarlo"))
        })
        .collect();
    let reps: Vec<Replication> = reps.into_iter().collect::<Result<_>>()?;
    let mut w = csv::Writer::from_writer(ctx.create("replications.csv")?);
    let levels = reps[0].levels.clone();
    let mut header = vec!["replication".to_string(), "seed".to_string()];
    for lv in &levels {
        header.push(format!("markup[z={lv}]"));
        header.push(format!("markup_error[z={lv}]"));
    }
    header.extend(["el_m", "el_k", "el_l", "tfp_corr", "crs_scale"].map(String::from));
    w.write_record(&header)?;
    for r in &reps {
        let mut row = vec![r.index.to_string(), r.seed.to_string()];
        for j in 0..levels.len() {
            row.push(fmt_f64(r.markup[j]));
            row.push(fmt_f64(r.markup_error[j]));
        }
        row.extend(
            r.elasticity
                .iter()
                .chain([r.tfp_corr, r.crs_scale].iter())
                .map(|v| fmt_f64(*v)),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    let stat = |f: &dyn Fn(&Replication) -> f64| mean_sd(&reps.iter().map(f).collect::<Vec<f64>>());
    let mut rows = Vec::new();
    for (j, lv) in levels.iter().enumerate() {
        let tag = if lv.is_nan() {
            String::new()
        } else {
            format!("[z={lv}]")
        };
        let truth = (!lv.is_nan()).then(|| 1.0 / structure.rho.at(*lv));
        let (m, s) = stat(&|r| r.markup[j]);
        rows.push(SummaryRow::new(format!("markup_crs{tag}"), truth, m).with_sd(s));
        let (m, s) = stat(&|r| r.markup_error[j]);
        rows.push(SummaryRow::new(format!("markup_error{tag}"), Some(0.0), m).with_sd(s));
    }
    let total = structure.theta_m + structure.theta_k + structure.theta_l;
    for (a, (name, th)) in [
        ("elasticity_m_crs", structure.theta_m),
        ("elasticity_k_crs", structure.theta_k),
        ("elasticity_l_crs", structure.theta_l),
    ]
    .iter()
    .enumerate()
    {
        let (m, s) = stat(&|r| r.elasticity[a]);
        rows.push(SummaryRow::new(*name, Some(th / total), m).with_sd(s));
    }
    let (m, s) = stat(&|r| r.tfp_corr);
    rows.push(SummaryRow::new("tfp_corr", Some(1.0), m).with_sd(s));
    Ok(Summary {
        mode: Mode::Montecarlo,
        tables: vec![Table {
            title: format!("{} replications, {} firms", reps.len(), n_firms),
            rows,
        }],
        details: json!({ "replications": reps }),
    })
}
