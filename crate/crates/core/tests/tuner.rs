use pulsesurge::bifurcation::params_in_r1;
use pulsesurge::signal::{extract_features, validate_against_spec, FeatureOptions, Tolerances};
use pulsesurge::tuner::{check_order_constraints, simulate_cycles, tune, CycleSpec, TuneConfig, TuneError};

fn digits(x: f64) -> String {
    format!("{x:.11e}")
}

#[test]
fn ewe_tune_is_admissible_and_reproducible() {
    let spec = CycleSpec::ewe();
    let cfg = TuneConfig::default();
    let first = tune(&spec, &cfg).expect("ewe tune");
    let second = tune(&spec, &cfg).expect("ewe tune");
    let p = first.params;
    let q = second.params;
    for (a, b) in [(p.epsilon, q.epsilon), (p.a0, q.a0), (p.a1, q.a1), (p.a2, q.a2), (p.c, q.c), (p.b1, q.b1), (p.b2, q.b2)] {
        assert_eq!(digits(a), digits(b));
    }
    assert_eq!(digits(first.days_per_unit), digits(second.days_per_unit));

    assert!(check_order_constraints(&p).pass);
    assert!(first.constraint_report.pass);
    let r1 = params_in_r1(&p, &cfg.region);
    assert!(r1.inside, "{r1:?}");
    assert!(p.a2 > p.lambda && p.a2 < 3f64.sqrt() * p.lambda);

    let (traj, _) = simulate_cycles(&p, 3.2, cfg.integration_tol, cfg.sample_dt).unwrap();
    let feats = extract_features(&traj, &FeatureOptions { frequency_target: Some(spec.frequency_ratio), ..FeatureOptions::default() }).unwrap();
    let report = validate_against_spec(&feats, &spec, &Tolerances::default(), first.days_per_unit);
    assert!(report.pass, "{:?}", report.failures().collect::<Vec<_>>());
}

#[test]
fn flat_frequency_spec_is_accepted() {
    let spec = CycleSpec {
        frequency_ratio: 1.0,
        end_follicular_pulse_period_minutes: None,
        early_luteal_pulse_period_minutes: None,
        ..CycleSpec::ewe()
    };
    match tune(&spec, &TuneConfig::default()) {
        Ok(res) => assert!(check_order_constraints(&res.params).pass),
        Err(e) => assert!(!matches!(e, TuneError::Spec(_) | TuneError::FrequencyRatioUnreachable { .. }), "{e}"),
    }
}

#[test]
fn invalid_spec_is_rejected() {
    let spec = CycleSpec { whole_cycle_days: -1.0, ..CycleSpec::ewe() };
    let err = tune(&spec, &TuneConfig::default()).unwrap_err();
    assert!(matches!(err, TuneError::Spec(_)));
}
