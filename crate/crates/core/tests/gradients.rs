use rpn::catalog::{expansion_cases, gradient_sweep};

#[test]
fn every_kind_triple_matches_central_differences() {
    let results = gradient_sweep(2024, 1e-6, 1e-5).unwrap();
    assert_eq!(results.len(), expansion_cases(6).len() * 9 * 5);
    let failures: Vec<_> = results.iter().filter(|r| !r.passed).collect();
    for f in &failures {
        eprintln!("{f:?}");
    }
    assert!(
        failures.is_empty(),
        "{} of {} triples failed",
        failures.len(),
        results.len()
    );
}

#[test]
fn sweep_is_reproducible() {
    let a = gradient_sweep(3, 1e-6, 1e-5).unwrap();
    let b = gradient_sweep(3, 1e-6, 1e-5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn corrupted_gradients_are_caught() {
    let results = rpn::catalog::gradient_sweep_with(5, 1e-6, 1e-5, true).unwrap();
    for r in results.iter().filter(|r| r.worst_param.is_some()) {
        assert!(!r.passed, "{r:?}");
        assert_eq!(r.worst_param, Some(0));
    }
}
