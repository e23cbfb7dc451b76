use std::fs;

use revid::cli::{self, Mode, RunConfig};
use revid::Error;

const SMALL: &str = r#"
seed = 4
[dgp]
kind = "ces"
n_firms = 3000
n_periods = 2
[estimation]
min_cell_rows = 150
"#;

#[test]
fn simulate_writes_panel_index_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::parse(SMALL).unwrap();
    let out = cli::run(&cfg, Mode::Simulate, dir.path()).unwrap();
    for f in [
        "panel.csv",
        "price_index.csv",
        "summary.json",
        "manifest.json",
    ] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    assert_eq!(out.manifest.seed, 4);
    assert!(out.manifest.design.contains_key("nonpar.kernel"));
    let text = cli::report(dir.path()).unwrap();
    assert!(text.contains("rows[t=2]"));
    assert!(dir.path().join("report_long.csv").is_file());
}

#[test]
fn simulation_is_seed_exact() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = RunConfig::parse(SMALL).unwrap();
    cli::run(&cfg, Mode::Simulate, a.path()).unwrap();
    cli::run(&cfg, Mode::Simulate, b.path()).unwrap();
    let read = |d: &std::path::Path| fs::read(d.join("panel.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
}

#[test]
fn identify_reads_a_written_panel() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    let cfg = RunConfig::parse(SMALL).unwrap();
    cli::run(&cfg, Mode::Simulate, &sim).unwrap();

    let mut cfg = RunConfig::parse(SMALL).unwrap();
    cfg.dgp = None;
    cfg.io.panel = Some(sim.join("panel.csv"));
    let res = dir.path().join("id");
    let out = cli::run(&cfg, Mode::Identify, &res).unwrap();
    assert!(res.join("firms_t2.csv").is_file());
    assert!(res.join("grids/phi_t2.csv").is_file());
    let rows = &out.summary.tables[0].rows;
    let corr = rows.iter().find(|r| r.object == "tfp_corr").unwrap();
    assert!(corr.estimate > 0.9);
    let diff = cli::diff(&res, &res).unwrap();
    assert!(diff.contains("tfp_corr"));
}

#[test]
fn report_names_missing_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    match cli::report(dir.path()) {
        Err(Error::Incomplete(missing)) => {
            assert!(missing.iter().any(|m| m.ends_with("summary.json")));
        }
        other => panic!("expected incomplete, got {other:?}"),
    }
}

#[test]
fn montecarlo_needs_a_ces_process() {
    let dir = tempfile::tempdir().unwrap();
    let err = cli::run(&RunConfig::default(), Mode::Montecarlo, dir.path()).unwrap_err();
    assert!(err.to_string().contains("dgp"), "{err}");
}
