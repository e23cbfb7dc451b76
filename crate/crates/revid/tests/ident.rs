use revid::dgp::{
    oracle_identified, simulate_ces, EndogenousLabor, OracleNormalization, ShifterLaw, ShifterMap,
    TrueStructure,
};
use revid::ident::{identify, IdentOptions, Identified};
use revid::panel::{make_pair, PanelPair};
use revid::Error;

fn pair_of(ts: &TrueStructure, n: usize, seed: u64) -> PanelPair {
    let panel = simulate_ces(ts, n, 2, seed).unwrap();
    make_pair(&panel, 2, 100).unwrap()
}

fn usable(id: &Identified) -> Vec<usize> {
    (0..id.ids.len())
        .filter(|&i| id.step3.flags[i].usable() && id.step3.markup[i].is_finite())
        .collect()
}

fn mean(rows: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    rows.iter().map(|&i| f(i)).sum::<f64>() / rows.len() as f64
}

#[test]
fn control_function_is_pinned_at_the_normalization_points() {
    let pair = pair_of(&TrueStructure::default(), 5000, 11);
    let id = identify(&pair, &IdentOptions::default()).unwrap();
    let np = id.norm;
    let at0 = id.control.minv.eval(&[np.m0, np.k, np.l], np.z).unwrap();
    let at1 = id.control.minv.eval(&[np.m1, np.k, np.l], np.z).unwrap();
    assert!(at0.abs() < 1e-10, "{at0}");
    assert!((at1 - 1.0).abs() < 1e-10, "{at1}");
    let f0 = id.step3.f.eval(&[np.m0, np.k, np.l]).unwrap();
    assert!(f0.abs() < 1e-10, "{f0}");
}

#[test]
fn markups_and_elasticities_satisfy_the_first_order_identities() {
    let pair = pair_of(&TrueStructure::default(), 5000, 12);
    let id = identify(&pair, &IdentOptions::default()).unwrap();
    let rows = usable(&id);
    assert!(rows.len() > 2000);
    for &i in rows.iter().step_by(37) {
        let x = id.inputs[i];
        let z = id.z[i];
        let dphi: Vec<f64> = (0..3)
            .map(|a| id.step1.phi.deriv(&x, z, a).unwrap())
            .collect();
        let dminv: Vec<f64> = (0..3)
            .map(|a| id.control.minv.deriv(&x, z, a).unwrap())
            .collect();
        let mu = id.step3.markup[i];
        let share = id.step3.share[i];
        assert!((mu * (dphi[0] - share) - dminv[0]).abs() < 1e-10 * mu);
        for a in 0..3 {
            let el = mu * dphi[a] - dminv[a];
            assert!((id.step3.elasticity[i][a] - el).abs() < 1e-10 * (1.0 + el.abs()));
        }
        assert!((id.step3.dlw[i] - 1.0).abs() < 1e-10);
    }
}

#[test]
fn markups_match_the_oracle_under_the_resolved_points() {
    let ts = TrueStructure::default();
    let pair = pair_of(&ts, 8000, 13);
    let id = identify(&pair, &IdentOptions::default()).unwrap();
    let np = id.norm;
    let oracle = oracle_identified(
        &ts,
        &[0.0, 1.0],
        OracleNormalization::Points {
            m0: np.m0,
            m1: np.m1,
            z: np.z,
        },
    );
    let rows = usable(&id);
    for (j, lv) in [0.0, 1.0].iter().enumerate() {
        let cell: Vec<usize> = rows.iter().copied().filter(|&i| id.z[i] == *lv).collect();
        let est = mean(&cell, |i| id.step3.markup[i]);
        let rel = (est - oracle.markup[j]) / oracle.markup[j];
        assert!(
            rel.abs() < 0.05,
            "level {lv}: {est} vs {}",
            oracle.markup[j]
        );
    }
}

#[test]
fn serially_independent_productivity_violates_the_rank_condition() {
    let ts = TrueStructure {
        h1: 0.0,
        ..TrueStructure::default()
    };
    let pair = pair_of(&ts, 4000, 14);
    let err = identify(&pair, &IdentOptions::default()).unwrap_err();
    assert!(
        matches!(err.root(), Error::RankCondition(_)),
        "unexpected error: {err}"
    );
}

#[test]
fn a_single_shifter_level_is_identified() {
    let ts = TrueStructure {
        z_law: ShifterLaw::Discrete { probs: vec![1.0] },
        alpha: ShifterMap::Levels(vec![1.0]),
        rho: ShifterMap::Levels(vec![0.8]),
        ..TrueStructure::default()
    };
    let pair = pair_of(&ts, 5000, 15);
    let id = identify(&pair, &IdentOptions::default()).unwrap();
    let rows = usable(&id);
    let truth = pair.truth.as_ref().unwrap();
    let est: Vec<f64> = rows.iter().map(|&i| id.control.omega[i]).collect();
    let tru: Vec<f64> = rows.iter().map(|&i| truth.omega[i]).collect();
    assert!(revid::ident::overid::correlation(&est, &tru) > 0.95);
    let np = id.norm;
    let oracle = oracle_identified(
        &ts,
        &[0.0],
        OracleNormalization::Points {
            m0: np.m0,
            m1: np.m1,
            z: np.z,
        },
    );
    let est = mean(&rows, |i| id.step3.markup[i]);
    assert!(
        ((est - oracle.markup[0]) / oracle.markup[0]).abs() < 0.05,
        "{est} vs {}",
        oracle.markup[0]
    );
}

#[test]
fn a_continuous_shifter_uses_the_joint_grid() {
    let ts = TrueStructure {
        z_law: ShifterLaw::Uniform { lo: 0.0, hi: 1.0 },
        alpha: ShifterMap::Affine {
            intercept: 1.0,
            slope: 0.2,
        },
        rho: ShifterMap::Affine {
            intercept: 0.8,
            slope: -0.05,
        },
        ..TrueStructure::default()
    };
    let pair = pair_of(&ts, 5000, 16);
    assert!(!pair.z_discrete);
    let id = identify(&pair, &IdentOptions::default()).unwrap();
    assert!(!id.step1.phi.is_discrete());
    let rows = usable(&id);
    assert!(rows.len() > 1000);
    let truth = pair.truth.as_ref().unwrap();
    let est: Vec<f64> = rows.iter().map(|&i| id.control.omega[i]).collect();
    let tru: Vec<f64> = rows.iter().map(|&i| truth.omega[i]).collect();
    assert!(revid::ident::overid::correlation(&est, &tru) > 0.9);
}

fn labor_structure(kappa: f64, persistence: f64) -> TrueStructure {
    TrueStructure {
        labor: Some(EndogenousLabor {
            persistence,
            innovation_sd: 0.3,
            kappa,
        }),
        ..TrueStructure::default()
    }
}

fn labor_options() -> IdentOptions {
    let mut opts = IdentOptions::default();
    opts.labor.endogenous = true;
    opts
}

#[test]
fn exogenous_labor_iv_agrees_with_ols() {
    let pair = pair_of(&labor_structure(0.0, 0.8), 6000, 17);
    let id = identify(&pair, &labor_options()).unwrap();
    let iv = id.labor.as_ref().unwrap();
    assert!(iv.first_stage_f > 10.0);
    let gap = (iv.theta_l - iv.ols_theta_l).abs();
    assert!(
        gap < 3.0 * iv.theta_l_se,
        "iv {} ols {} se {}",
        iv.theta_l,
        iv.ols_theta_l,
        iv.theta_l_se
    );
}

#[test]
fn serially_independent_labor_is_a_weak_instrument() {
    let pair = pair_of(&labor_structure(0.5, 0.0), 6000, 18);
    let err = identify(&pair, &labor_options()).unwrap_err();
    assert!(
        matches!(err.root(), Error::WeakInstrument { .. }),
        "unexpected error: {err}"
    );
}
