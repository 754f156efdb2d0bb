use dpsketch::guard::{linreg_sketch_dim, AccuracySpec, PrivacyBudget};
use dpsketch::harness::{
    bound_check_matprod, default_product_case, dp_density_ratio_check, mc_inner_product, mc_pseudoinverse_frobenius,
    mc_pseudoinverse_spectral, mc_subspace_embedding, run_suite, DensityCheck,
};
use dpsketch::par::{map_trials, map_trials_sequential};
use dpsketch::Error;

fn budget() -> PrivacyBudget {
    PrivacyBudget::new(1.0, 0.01).unwrap()
}

#[test]
fn pseudoinverse_frobenius_balanced_case() {
    let rep = mc_pseudoinverse_frobenius(10, 11, 10_000, 100).unwrap();
    assert!(rep.pass, "{}", rep.summary());
    // the root reading compares √E against √(k/(p−1)) = 1
    let root = rep.detail["root_mean"].as_f64().unwrap();
    assert!((root - 1.0).abs() < 0.025);
}

#[test]
fn pseudoinverse_spectral_bound_decreases_in_oversampling() {
    let targets: Vec<f64> = (1..30)
        .map(|p| mc_pseudoinverse_spectral(5, p, 1, 0).unwrap().target.unwrap())
        .collect();
    assert!(targets.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn density_check_passes_above_guard_and_fails_far_below() {
    let mut cfg = DensityCheck::new(6, 4, budget(), 100_000, 8);
    let rep = dp_density_ratio_check(&cfg).unwrap();
    assert!(rep.pass, "{}", rep.summary());
    cfg.margin = 0.05;
    cfg.enforce_guard = false;
    let neg = dp_density_ratio_check(&cfg).unwrap();
    assert!(!neg.pass, "{}", neg.summary());
    cfg.enforce_guard = true;
    assert!(matches!(dp_density_ratio_check(&cfg), Err(Error::GuardFailed { .. })));
}

#[test]
fn inner_products_at_regression_width() {
    assert!(mc_inner_product(40, 400, 0.25, 2000, 3).unwrap().pass);
}

#[test]
fn subspace_embedding_at_regression_width() {
    let acc = AccuracySpec::new(0.5, 0.2).unwrap();
    let r = linreg_sketch_dim(&acc, 10).unwrap();
    let rep = mc_subspace_embedding(10, 2 * (200 + 10), r, 0.5, 0.2, 300, 4).unwrap();
    assert!(rep.pass, "{}", rep.summary());
    // a much narrower sketch cannot hold the same deviation
    let narrow = mc_subspace_embedding(10, 2 * (200 + 10), 12, 0.5, 0.2, 300, 4).unwrap();
    assert!(!narrow.pass, "{}", narrow.summary());
}

#[test]
fn reports_are_reproducible_and_order_independent() {
    let case = default_product_case().unwrap();
    let seeds: Vec<u64> = (40..50).collect();
    let a = bound_check_matprod(&case, &seeds, 1.0).unwrap().to_json();
    let b = bound_check_matprod(&case, &seeds, 1.0).unwrap().to_json();
    assert_eq!(a, b);
    let f = |s: u64| {
        mc_pseudoinverse_frobenius(3, 4, 20, s)
            .unwrap()
            .statistic
            .unwrap()
            .to_bits()
    };
    assert_eq!(map_trials(&seeds, f), map_trials_sequential(&seeds, f));
}

#[test]
fn quick_suite_meets_every_expectation() {
    let entries = run_suite(true, 2).unwrap();
    assert!(entries.iter().any(|e| e.expect_fail));
    for e in &entries {
        assert!(e.ok(), "{} (expect_fail = {})", e.report.summary(), e.expect_fail);
        assert!(!e.report.seeds.is_empty());
    }
}
