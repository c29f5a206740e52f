mod common;

use common::*;

#[test]
fn logprob_grad_matches_central_differences_discrete() {
    let err = gradient_check(&discrete_space(), 20, 1);
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn logprob_grad_matches_central_differences_continuous() {
    let err = gradient_check(&continuous_space(), 20, 2);
    assert!(err <= 1e-4, "max relative error {err:e}");
}

#[test]
fn weiszfeld_matches_brute_force() {
    let worst = geomedian_ratio_worst(100, 3);
    assert!(worst <= 1.0 + 1e-6, "worst objective ratio {worst}");
}

#[test]
fn brute_force_reproduces_the_fermat_point() {
    let pts = [pv(&[0.0, 0.0]), pv(&[2.0, 0.0]), pv(&[1.0, 1.0])];
    let (z, _) = brute_force_geomedian(&pts);
    assert!((z[0] - 1.0).abs() < 1e-6 && (z[1] - 1.0 / 3f64.sqrt()).abs() < 1e-6, "{z:?}");
    let w = fermat_case();
    assert!((w[0] - 1.0).abs() < 1e-3 && (w[1] - 0.5774).abs() < 1e-3, "{w:?}");
}

#[test]
fn discrete_certificate_is_exact() {
    let (checked, failures) = theorem1_exhaustive();
    assert!(checked > 100);
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn continuous_bound_is_never_exceeded() {
    let (worst, violations) = theorem2_trials(10_000, 4);
    assert_eq!(violations, 0, "worst displacement / bound = {worst}");
    // the random corruptions get reasonably close to the bound
    assert!(worst > 0.1, "{worst}");
}

#[test]
fn attack_degenerate_identities() {
    let id = attack_identities();
    assert_eq!(id.same_aggregate, 0.0);
    assert!((id.antipodal - 2.0).abs() < 1e-12);
    assert_eq!(id.no_malicious, 0.0);
    let (best, at_zero, _) = id.stage1;
    assert!(best >= at_zero, "{:?}", id.stage1);
    let (best, at_one, grid_max) = id.stage2;
    assert!(best >= at_one && (best - grid_max).abs() < 1e-9, "{:?}", id.stage2);
    let (best, at_zero, grid_max) = id.shejwalkar;
    assert!(best >= at_zero, "{:?}", id.shejwalkar);
    assert!((best - grid_max).abs() <= 1e-3 * grid_max, "{:?}", id.shejwalkar);
}
