use proptest::prelude::*;

use revid::demand::{CesRevenue, DemandOptions, HsaSystem};
use revid::nonpar::path_integrate;
use revid::norm::laspeyres;
use revid::panel::{read_csv, FirmPanel, FirmRecord, Schema};

fn ces(u0: Vec<f64>, rho: f64) -> HsaSystem<CesRevenue> {
    let n = u0.len();
    let rev = CesRevenue {
        levels: vec![0.0, 1.0],
        intercept: vec![0.2, -0.3],
        rho: vec![rho, rho],
    };
    let ids = (0..n).map(|i| format!("f{i}")).collect();
    let z0 = (0..n).map(|i| (i % 2) as f64).collect();
    HsaSystem::new(rev, ids, u0, z0, DemandOptions::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laspeyres_is_homogeneous_in_new_prices(
        rows in prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64), 1..40),
        c in -1.0..1.0f64,
    ) {
        let p0: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let y0: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let p1: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let shifted: Vec<f64> = p1.iter().map(|p| p + c).collect();
        let a = laspeyres(&p0, &y0, &p1).unwrap();
        let b = laspeyres(&p0, &y0, &shifted).unwrap();
        prop_assert!((b - c.exp() * a).abs() <= 1e-12 * b.abs().max(1.0));
        prop_assert!((laspeyres(&p0, &y0, &p0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregator_scales_with_quantities(
        u0 in prop::collection::vec(-1.5..1.5f64, 2..30),
        k in 0.2..5.0f64,
        rho in 0.3..0.95f64,
    ) {
        let s = ces(u0, rho);
        let a = s.solve_aggregator(&s.u0, &s.z0).unwrap();
        prop_assert!((a.a - 1.0).abs() < 1e-10);
        let u: Vec<f64> = s.u0.iter().map(|v| v + k.ln()).collect();
        let ak = s.solve_aggregator(&u, &s.z0).unwrap();
        prop_assert!((ak.a - k).abs() <= 1e-8 * k);
        let p = s.inverse_demand(&u, &s.z0, &ak).unwrap();
        let spend: f64 = p.iter().zip(&u).map(|(p, v)| p * v.exp()).sum();
        prop_assert!((spend - s.budget).abs() <= 1e-8 * s.budget);
    }

    #[test]
    fn path_integral_of_a_linear_field_is_exact(
        o in prop::array::uniform3(-3.0..3.0f64),
        t in prop::array::uniform3(-3.0..3.0f64),
        w in prop::array::uniform3(-2.0..2.0f64),
    ) {
        let v = path_integrate(|a, _| Some(w[a]), &o, &t, &[2, 0, 1], 1e-10, None).unwrap();
        let exact: f64 = (0..3).map(|a| w[a] * (t[a] - o[a])).sum();
        prop_assert!((v - exact).abs() < 1e-9);
    }

    #[test]
    fn panel_csv_round_trips(
        rows in prop::collection::vec(
            (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64, 0u8..3, 0.01..100.0f64),
            1..30,
        ),
    ) {
        let records: Vec<FirmRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, &(r, m, k, l, z, mx))| FirmRecord {
                firm_id: format!("f{i}"),
                period: 1 + (i % 2) as i64,
                r,
                m,
                k,
                l,
                z: z as f64,
                mx,
                latent: None,
            })
            .collect();
        let panel = FirmPanel::from_records(records, 10).unwrap();
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &Schema::default(), 10).unwrap();
        prop_assert_eq!(back, panel);
    }
}
