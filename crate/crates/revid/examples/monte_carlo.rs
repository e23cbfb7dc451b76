//! Replicates simulation, identification and scale normalization across seeds.
//!
//! cargo run --release --example monte_carlo -- [replications] [n_firms]

use revid::cli::run::replicate;
use revid::dgp::rng::{child_seed, tag};
use revid::dgp::TrueStructure;
use revid::ident::IdentOptions;
use revid::nonpar::bandwidth::mean_sd;
use revid::norm::RegionSpec;

fn main() -> revid::Result<()> {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5000);
    let ts = TrueStructure::default();
    let opts = IdentOptions::default();
    let region = RegionSpec::default();
    let mut out = Vec::new();
    for r in 0..reps {
        let seed = child_seed(2024, tag::REPLICATION, r as u64);
        let rep = replicate(&ts, &opts, &region, n, 2, r, seed)?;
        println!(
            "replication {r}: markups {:?}, productivity correlation {:.4}",
            rep.markup
                .iter()
                .map(|v| format!("{v:.4}"))
                .collect::<Vec<_>>(),
            rep.tfp_corr
        );
        out.push(rep);
    }
    for (j, lv) in out[0].levels.iter().enumerate() {
        let (m, s) = mean_sd(&out.iter().map(|r| r.markup[j]).collect::<Vec<_>>());
        println!(
            "z = {lv}: markup mean {m:.4}, sd {s:.4}, truth {:.4}",
            1.0 / ts.rho.at(*lv)
        );
    }
    Ok(())
}
