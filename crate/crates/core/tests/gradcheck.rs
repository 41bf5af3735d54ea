//! Full finite-difference sweep over every op family and both composite
//! modules, plus the deliberate-corruption negative control.

use denet::gradcheck::{families, run_family, run_suite};

#[test]
fn every_family_matches_finite_differences() {
    let reports = run_suite(None);
    assert!(reports.len() >= 12, "need 12+ families, got {}", reports.len());
    let mut all_ok = true;
    for r in &reports {
        println!("{}", r.line());
        all_ok &= r.passed();
    }
    assert!(all_ok, "at least one gradient family exceeded tolerance");
}

#[test]
fn corruption_fixture_fails_exactly_the_named_family() {
    let fams = families();
    let f = fams
        .iter()
        .find(|f| f.name == "depthwise_conv2d")
        .expect("family exists");
    let clean = run_family(f, 11, false);
    let dirty = run_family(f, 11, true);
    assert!(clean.passed(), "{}", clean.line());
    assert!(!dirty.passed(), "{}", dirty.line());
    assert!(dirty.line().contains("depthwise_conv2d"));
}
