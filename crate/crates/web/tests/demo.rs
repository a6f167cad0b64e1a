use negishi_web::{bond_sweep_json, equilibrium_json, zero_bond_json};

#[test]
fn symmetric_pair_does_not_trade() {
    let v = equilibrium_json([0.9, 0.9], 1.0, [1.0, 1.0], 0.0, 20).unwrap();
    for row in v["consumption"].as_array().unwrap() {
        for c in row.as_array().unwrap() {
            assert!((c.as_f64().unwrap() - 1.0).abs() < 1e-12);
        }
    }
    assert!((v["gamma"].as_f64().unwrap() - 0.5).abs() < 1e-15);
    let i0 = v["interest_rates"][0].as_f64().unwrap();
    assert!((i0 - (1.0 / 0.9 - 1.0)).abs() < 1e-12);
}

#[test]
fn creditor_consumes_more() {
    let v = equilibrium_json([0.95, 0.95], 2.0, [1.0, 1.0], 0.5, 30).unwrap();
    let c0 = v["consumption"][0][0].as_f64().unwrap();
    let c1 = v["consumption"][1][0].as_f64().unwrap();
    assert!(c0 > c1);
    assert!(v["max_budget"].as_f64().unwrap() < 1e-10);
    assert!(v["mu_ratio_drift"].as_f64().unwrap() < 1e-8);
}

#[test]
fn zero_bond_check_matches_discount_gap() {
    let v = zero_bond_json([0.96, 0.92], 1.0, [1.0, 1.0], 10).unwrap();
    assert_eq!(v["verdict"], "Inconsistent");
    assert!((v["rate_spread"].as_f64().unwrap() - (1.0 / 0.92 - 1.0 / 0.96)).abs() < 1e-12);
    let mu = v["mu_ratio"].as_array().unwrap();
    assert_eq!(mu.len(), 11);
    let ratio = mu[1].as_f64().unwrap() / mu[0].as_f64().unwrap();
    assert!((ratio - 0.96 / 0.92).abs() < 1e-12);

    let v = zero_bond_json([0.95, 0.95], 2.0, [1.0, 1.5], 10).unwrap();
    assert_eq!(v["verdict"], "Consistent");
}

#[test]
fn bond_sweep_approaches_zero_bond_equilibrium() {
    let v = bond_sweep_json([0.96, 0.92], 1.0, [1.0, 1.0], 1.0, 20, 10).unwrap();
    assert_eq!(v["diffs_monotone"], true);
    assert!(v["limit_gap"].as_f64().unwrap() < 1e-6);
    for r in v["ratio_estimates"].as_array().unwrap() {
        assert!(r.as_f64().unwrap() < 1.0);
    }
}

#[test]
fn rejects_out_of_range_inputs() {
    assert!(equilibrium_json([1.1, 0.9], 1.0, [1.0, 1.0], 0.0, 10).unwrap_err().contains("agents[0].beta"));
    assert!(equilibrium_json([0.9, 0.9], 1.0, [1.0, 1.0], 0.0, 100_000).is_err());
    assert!(bond_sweep_json([0.9, 0.9], 1.0, [1.0, 1.0], 1.0, 10, 1).is_err());
}
