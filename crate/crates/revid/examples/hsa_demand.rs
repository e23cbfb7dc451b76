//! Builds a homothetic demand system from identified output and revenue, then
//! evaluates a quantity counterfactual.
//!
//! cargo run --release --example hsa_demand -- [n_firms]

use revid::demand::{build_hsa, CesRevenue, DemandOptions, HsaSystem};
use revid::dgp::{simulate_ces, TrueStructure};
use revid::ident::{identify, IdentOptions};
use revid::norm::{rescale, scale_from_crs, RegionSpec};
use revid::panel::make_pair;

fn main() -> revid::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let ts = TrueStructure::default();
    let panel = simulate_ces(&ts, n, 2, 5)?;
    let pair = make_pair(&panel, 2, 100)?;
    let id = identify(&pair, &IdentOptions::default())?;
    let region = RegionSpec::default().resolve(&[&pair])?;
    let b = scale_from_crs(&id.step3, &region)?.b_t.expect("scale");
    let id = rescale(&id, b)?;

    let sys = build_hsa(&id, &DemandOptions::default())?;
    println!(
        "{} firms, budget {:.2}, share-condition violations off the data: {}",
        sys.len(),
        sys.budget,
        sys.checks.off_manifold_violations.len()
    );
    let base = sys.evaluate(&sys.u0, &sys.z0)?;
    println!("A at the data point: {:.12}", base.aggregator.a);

    let doubled: Vec<f64> = sys.u0.iter().map(|u| u + 2f64.ln()).collect();
    let twice = sys.evaluate(&doubled, &sys.z0)?;
    println!(
        "all quantities doubled: A {:.12}, utility gain {:.12} (ln 2 = {:.12})",
        twice.aggregator.a,
        twice.ln_utility - base.ln_utility,
        2f64.ln()
    );

    let mut u = sys.u0.clone();
    for v in u.iter_mut().take(sys.len() / 10) {
        *v += 0.5;
    }
    let cf = sys.evaluate(&u, &sys.z0)?;
    println!(
        "a tenth of firms expand by half a log point: A {:.6}, ln U {:.6}",
        cf.aggregator.a, cf.ln_utility
    );

    let levels = vec![0.0, 1.0];
    let ces = CesRevenue {
        levels: levels.clone(),
        intercept: levels.iter().map(|&z| ts.alpha.at(z)).collect(),
        rho: levels.iter().map(|&z| ts.rho.at(z)).collect(),
    };
    let truth = pair.truth.as_ref().expect("simulated truth");
    let exact = HsaSystem::new(
        ces,
        pair.ids.clone(),
        truth.y.clone(),
        pair.z.clone(),
        DemandOptions::default(),
    )?;
    let e = exact.evaluate(&exact.u0, &exact.z0)?;
    println!(
        "exact CES system at the data point: A {:.12}",
        e.aggregator.a
    );
    Ok(())
}
