//! Fixes scale and location across two identified periods and recovers
//! productivity growth from a supplied price index.
//!
//! cargo run --release --example normalize -- [n_firms]

use revid::dgp::{simulate_ces, TrueStructure};
use revid::ident::{identify, IdentOptions};
use revid::norm::{
    location_link, pooled_median, rescale, scale_from_crs, scale_ratio, true_price_index,
    RegionSpec, ScaleMethod,
};
use revid::panel::make_pair;

fn main() -> revid::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10_000);
    let ts = TrueStructure {
        alpha_shift_by_period: vec![0.0, 0.0, 0.3],
        ..TrueStructure::default()
    };
    let panel = simulate_ces(&ts, n, 3, 9)?;
    let p_star = true_price_index(&panel)?;
    let (p2, p3) = (make_pair(&panel, 2, 100)?, make_pair(&panel, 3, 100)?);
    let opts = IdentOptions::default();
    let (i2, i3) = (identify(&p2, &opts)?, identify(&p3, &opts)?);

    let region = RegionSpec::default().resolve(&[&p2, &p3])?;
    for m in [
        ScaleMethod::EtaVariance,
        ScaleMethod::ElasticityConstancy,
        ScaleMethod::ReturnsConstancy,
        ScaleMethod::LocalCrs,
    ] {
        let r = scale_ratio(&i2, &i3, m, &region)?;
        println!("b3 / b2 by {m:?}: {:.4}", r.b_ratio.unwrap_or(f64::NAN));
    }
    let b2 = scale_from_crs(&i2.step3, &region)?.b_t.expect("scale");
    let b3 = scale_from_crs(&i3.step3, &region)?.b_t.expect("scale");
    let (r2, r3) = (rescale(&i2, b2)?, rescale(&i3, b3)?);

    let link = location_link(&r2, &r2, &r3, &p_star, pooled_median(&[&p2, &p3]))?;
    println!(
        "location shifts: a12 {:.4}, a1 {:.4}, a2 {:.4} over {} firms",
        link.a12_diff,
        link.a1_diff,
        link.a2_diff,
        link.ids.len()
    );
    let (t2, t3) = (p2.truth.as_ref().unwrap(), p3.truth.as_ref().unwrap());
    let pos2: std::collections::HashMap<&str, usize> = p2
        .ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let pos3: std::collections::HashMap<&str, usize> = p3
        .ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let err = link
        .ids
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let (i, j) = (pos2[id.as_str()], pos3[id.as_str()]);
            (link.tfp_growth[k] - (t3.omega[j] - t2.omega[i])).abs()
        })
        .sum::<f64>()
        / link.ids.len() as f64;
    println!("mean absolute productivity-growth error: {err:.4}");
    Ok(())
}
