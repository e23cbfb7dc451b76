//! Identifies markups, elasticities and productivity from a simulated two-period panel
//! and compares them with the closed-form oracle.
//!
//! cargo run --release --example identify -- [n_firms]

use std::time::Instant;

use revid::dgp::{oracle_identified, simulate_ces, OracleNormalization, TrueStructure};
use revid::ident::overid::correlation;
use revid::ident::{identify, IdentOptions};
use revid::norm::{scale_from_crs, RegionSpec};
use revid::panel::make_pair;

fn main() -> revid::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let ts = TrueStructure::default();
    let panel = simulate_ces(&ts, n, 2, 7)?;
    let pair = make_pair(&panel, 2, 100)?;

    let start = Instant::now();
    let id = identify(&pair, &IdentOptions::default())?;
    println!("identified {} firms in {:.1?}", pair.len(), start.elapsed());
    println!("anchor: {:?}", id.control.parts.anchor.component);

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
    let region = RegionSpec::default().resolve(&[&pair])?;
    let b = scale_from_crs(&id.step3, &region)?
        .b_t
        .expect("absolute scale");
    println!("scale: {b:.4} (oracle {:.4})", oracle.crs_scale);

    let rows: Vec<usize> = (0..pair.len())
        .filter(|&i| id.step3.flags[i].usable() && id.step3.markup[i].is_finite())
        .collect();
    for (j, lv) in [0.0, 1.0].iter().enumerate() {
        let cell: Vec<usize> = rows.iter().copied().filter(|&i| id.z[i] == *lv).collect();
        let mu = cell.iter().map(|&i| id.step3.markup[i]).sum::<f64>() / cell.len() as f64;
        println!(
            "z = {lv}: markup {:.4} (oracle {:.4}), after scale {:.4} (truth {:.4})",
            mu,
            oracle.markup[j],
            mu / b,
            1.0 / ts.rho.at(*lv)
        );
    }
    for (a, name) in ["m", "k", "l"].iter().enumerate() {
        let el = rows.iter().map(|&i| id.step3.elasticity[i][a]).sum::<f64>() / rows.len() as f64;
        println!("elasticity {name}: {:.4}", el / b);
    }
    let truth = pair.truth.as_ref().expect("simulated truth");
    let est: Vec<f64> = rows.iter().map(|&i| id.control.omega[i]).collect();
    let tru: Vec<f64> = rows.iter().map(|&i| truth.omega[i]).collect();
    println!("productivity correlation: {:.4}", correlation(&est, &tru));
    Ok(())
}
