//! Rendering and comparison of results directories.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use super::run::Manifest;
use super::{Summary, SummaryRow};
use crate::error::{Error, Result};

fn load(dir: &Path) -> Result<(Summary, Manifest)> {
    let missing: Vec<String> = ["summary.json", "manifest.json"]
        .iter()
        .filter(|f| !dir.join(f).is_file())
        .map(|f| dir.join(f).display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Incomplete(missing));
    }
    let summary: Summary = serde_json::from_reader(File::open(dir.join("summary.json"))?)?;
    let manifest: Manifest = serde_json::from_reader(File::open(dir.join("manifest.json"))?)?;
    let absent: Vec<String> = manifest
        .artifacts
        .iter()
        .filter(|a| !dir.join(a).is_file())
        .map(|a| dir.join(a).display().to_string())
        .collect();
    if !absent.is_empty() {
        return Err(Error::Incomplete(absent));
    }
    Ok((summary, manifest))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

/// Formats the summary of `dir` as text and writes `report_long.csv` there.
pub fn report(dir: &Path) -> Result<String> {
    let (summary, manifest) = load(dir)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "mode {}  seed {}  version {}",
        manifest.mode.name(),
        manifest.seed,
        manifest.version
    );
    let mut w = csv::Writer::from_path(dir.join("report_long.csv"))?;
    w.write_record(["table", "object", "truth", "estimate", "rel_error", "sd"])?;
    for t in &summary.tables {
        let _ = writeln!(s, "\n{}", t.title);
        let _ = writeln!(
            s,
            "{:<32} {:>14} {:>14} {:>12} {:>12}",
            "object", "truth", "estimate", "rel_error", "sd"
        );
        for r in &t.rows {
            let _ = writeln!(
                s,
                "{:<32} {:>14} {:>14} {:>12} {:>12}",
                r.object,
                cell(r.truth),
                cell(Some(r.estimate)),
                cell(r.rel_error),
                cell(r.sd)
            );
            w.write_record([
                t.title.clone(),
                r.object.clone(),
                crate::panel::fmt_f64(r.truth.unwrap_or(f64::NAN)),
                crate::panel::fmt_f64(r.estimate),
                crate::panel::fmt_f64(r.rel_error.unwrap_or(f64::NAN)),
                crate::panel::fmt_f64(r.sd.unwrap_or(f64::NAN)),
            ])?;
        }
    }
    w.flush()?;
    Ok(s)
}

fn flatten(s: &Summary) -> Vec<(String, &SummaryRow)> {
    s.tables
        .iter()
        .flat_map(|t| {
            t.rows
                .iter()
                .map(move |r| (format!("{} / {}", t.title, r.object), r))
        })
        .collect()
}

/// Side-by-side estimates of two results directories.
pub fn diff(a: &Path, b: &Path) -> Result<String> {
    let (sa, _) = load(a)?;
    let (sb, _) = load(b)?;
    let fb = flatten(&sb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<48} {:>14} {:>14} {:>14}",
        "object", "a", "b", "b - a"
    );
    for (key, ra) in flatten(&sa) {
        let rb = fb.iter().find(|(k, _)| *k == key).map(|(_, r)| r.estimate);
        let _ = writeln!(
            s,
            "{:<48} {:>14} {:>14} {:>14}",
            key,
            cell(Some(ra.estimate)),
            cell(rb),
            cell(rb.map(|v| v - ra.estimate))
        );
    }
    for (key, rb) in &fb {
        if !flatten(&sa).iter().any(|(k, _)| k == key) {
            let _ = writeln!(
                s,
                "{:<48} {:>14} {:>14} {:>14}",
                key,
                "-",
                cell(Some(rb.estimate)),
                "-"
            );
        }
    }
    Ok(s)
}
