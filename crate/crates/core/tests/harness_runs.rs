use eio_core::harness::{loglog_slope, reference_spec, run_experiment};

#[test]
fn report_does_not_depend_on_thread_count() {
    let one = run_experiment(&reference_spec(24, 5, 1)).unwrap();
    let four = run_experiment(&reference_spec(24, 5, 4)).unwrap();
    assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&four).unwrap());
    assert_eq!(one.records.len(), 24);
}

#[test]
fn slope_needs_two_grid_points() {
    assert!(loglog_slope(&[1e3], &[0.1], -0.4).slope.is_none());
    // Exact power law: the fit recovers the exponent.
    let n1 = [1e3, 1e4, 1e5];
    let risk: Vec<f64> = n1.iter().map(|n: &f64| 2.0 * n.powf(-0.4)).collect();
    let fit = loglog_slope(&n1, &risk, -0.4);
    assert!((fit.slope.unwrap() + 0.4).abs() <= 1e-12);
}
