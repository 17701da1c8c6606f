//! End-to-end threshold location on a parameter set whose optimal-regime
//! map actually changes with the arrival rate.
//!
//! With cheap power (low beta) the fast rate wins both at very low load
//! (power differences vanish but the response gain stays) and at high load
//! (queueing dominates), with a both-speeds window in between. That
//! fast/both/fast progression exercises bracket bisection, the named
//! threshold assignment, and the structure-violation reporting.

use sleepscale::{
    classify, find_thresholds, optimize, Regime, SearchSpace, SystemParams, ThresholdSearch,
    Tolerances,
};

fn power_hungry_params() -> SystemParams {
    SystemParams {
        lambda: 1.0,
        mu: 1.0,
        c: 2.0,
        gamma: 2.0,
        p_idle: 0.3,
        p_setup: 4.0,
        p_slow: 1.0,
        p_fast: 4.0,
        beta: 1.0,
    }
}

#[test]
fn fast_both_fast_progression_is_reported_as_a_violation() {
    let params = power_hungry_params();
    let search = ThresholdSearch::new(0.05, 1.8, 0.02);
    let report = find_thresholds(
        &params,
        &search,
        &SearchSpace::default(),
        &Tolerances::default(),
    )
    .unwrap();

    let observed: Vec<Regime> = report.regime_sequence.iter().map(|s| s.regime).collect();
    assert_eq!(
        observed,
        vec![
            Regime::FastOnlyAlwaysOn,
            Regime::BothSpeedsAlwaysOn,
            Regime::FastOnlyAlwaysOn
        ]
    );
    // Not the expected progression: flagged, not an error.
    assert!(report.structure_violation);
    assert_eq!(report.offending.len(), 1);
    let odd = report.offending[0];
    assert_eq!(odd.from, Regime::FastOnlyAlwaysOn);
    assert_eq!(odd.to, Regime::BothSpeedsAlwaysOn);
    // The both -> fast change still matches the lambda1 pattern.
    assert!(report.lambda1.is_some());
    assert!(report.lambda2.is_none() && report.lambda3.is_none());
    for b in &report.brackets {
        assert!(b.width() <= 0.02 + 1e-12);
    }
}

#[test]
fn partial_sequences_in_range_are_clean() {
    // Restricted to the upper part of the sweep the observed sequence is
    // both -> fast, a contiguous run of the expected order.
    let params = power_hungry_params();
    let search = ThresholdSearch::new(0.7, 1.8, 0.02);
    let space = SearchSpace::default();
    let tol = Tolerances::default();
    let report = find_thresholds(&params, &search, &space, &tol).unwrap();

    let observed: Vec<Regime> = report.regime_sequence.iter().map(|s| s.regime).collect();
    assert_eq!(
        observed,
        vec![Regime::BothSpeedsAlwaysOn, Regime::FastOnlyAlwaysOn]
    );
    assert!(!report.structure_violation);
    assert!(report.offending.is_empty());
    assert!(report.lambda2.is_none() && report.lambda3.is_none());

    let (lo, hi) = report
        .lambda1
        .expect("the both->fast threshold is in range");
    assert!(hi - lo <= 0.02 + 1e-12);
    // Re-verify the bracket endpoints by direct optimization.
    let at = |lambda: f64| {
        let (best, _) = optimize(&params.with_lambda(lambda), &space, &tol).unwrap();
        classify(&best)
    };
    assert_eq!(at(lo), Regime::BothSpeedsAlwaysOn);
    assert_eq!(at(hi), Regime::FastOnlyAlwaysOn);
}

#[test]
fn threshold_reports_are_deterministic() {
    let params = power_hungry_params();
    let search = ThresholdSearch::new(0.7, 1.8, 0.05);
    let space = SearchSpace::default();
    let tol = Tolerances::default();
    let a = find_thresholds(&params, &search, &space, &tol).unwrap();
    let b = find_thresholds(&params, &search, &space, &tol).unwrap();
    assert_eq!(a, b);
}
