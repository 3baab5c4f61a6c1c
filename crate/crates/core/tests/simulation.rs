use keyboard::grid::{DoseCoord, Grid};
use keyboard::scenario::ToxScenario;
use keyboard::sim::{
    export_results, run_study, simulate_trial, SimSpec, StudyReport, REPORT_FILE, SUMMARY_FILE, SUMMARY_HEADER,
};
use keyboard::trial::{Design, TrialConfig, TrialStatus};
use keyboard::KeyboardError;

fn scenario(rows: Vec<Vec<f64>>, phi: f64) -> ToxScenario {
    ToxScenario::from_matrix(Grid::from_rows(rows).unwrap(), phi).unwrap()
}

#[test]
fn very_toxic_lowest_dose_stops_early() {
    let design = Design::new(TrialConfig::new(2, 2, 0.2, 0.05, 0.05, 30)).unwrap();
    let s = scenario(vec![vec![0.99, 0.995], vec![0.995, 0.999]], 0.2);
    let stopped = (0..1000)
        .filter(|&seed| simulate_trial(&design, &s, 0, seed).unwrap().status == TrialStatus::StoppedSafety)
        .count();
    assert!(stopped > 950, "{stopped} of 1000 stopped");
}

#[test]
fn single_dose_at_target_is_selected() {
    let design = Design::new(TrialConfig::new(1, 1, 0.3, 0.05, 0.05, 24)).unwrap();
    let s = scenario(vec![vec![0.3]], 0.3);
    for seed in 0..200 {
        let r = simulate_trial(&design, &s, 0, seed).unwrap();
        if r.status != TrialStatus::StoppedSafety {
            assert_eq!(r.selected, Some(DoseCoord::LOWEST));
        }
    }
}

#[test]
fn trial_records_are_reproducible() {
    let design = Design::new(TrialConfig::new(3, 3, 0.3, 0.05, 0.05, 30)).unwrap();
    let s = scenario(
        vec![vec![0.05, 0.1, 0.2], vec![0.1, 0.3, 0.45], vec![0.2, 0.5, 0.6]],
        0.3,
    );
    let a = simulate_trial(&design, &s, 0, 42).unwrap();
    assert_eq!(a, simulate_trial(&design, &s, 0, 42).unwrap());
    assert_eq!(a.total_patients(), 30);
    assert_eq!(a.cohorts, 30);
}

#[test]
fn mismatched_scenario_is_rejected() {
    let design = Design::new(TrialConfig::new(2, 2, 0.3, 0.05, 0.05, 30)).unwrap();
    let s = scenario(vec![vec![0.3]], 0.3);
    assert!(simulate_trial(&design, &s, 0, 0).is_err());
}

fn small_report() -> StudyReport {
    let mut spec = SimSpec::generated(TrialConfig::new(2, 4, 0.3, 0.05, 0.05, 24), Some(2), 5);
    spec.trials_per_scenario = 8;
    spec.seed = 3;
    run_study(&spec).unwrap()
}

#[test]
fn report_json_round_trips() {
    let report = small_report();
    let back = StudyReport::from_json(&report.to_json().unwrap()).unwrap();
    assert_eq!(back, report);
}

#[test]
fn export_writes_both_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let report = small_report();
    export_results(&report, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some(SUMMARY_HEADER));
    assert_eq!(csv.lines().count(), 1 + 5 + 1);
    let json = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
    assert_eq!(StudyReport::from_json(&json).unwrap(), report);
}

#[test]
fn export_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("out");
    match export_results(&small_report(), &target) {
        Err(KeyboardError::Io { path, .. }) => assert_eq!(path, target),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}

#[test]
fn spec_json_defaults() {
    let spec = SimSpec::from_json(
        r#"{"trial": {"rows": 2, "cols": 4, "phi": 0.3, "eps1": 0.05, "eps2": 0.05, "max_n": 48},
            "scenarios": {"kind": "generated", "target_mtd_count": 2},
            "n_scenarios": 10}"#,
    )
    .unwrap();
    assert_eq!(spec.trials_per_scenario, 100);
    assert_eq!(spec.trial.cutoff, 0.95);
    assert_eq!(spec.trial.cohort_size, 1);
    assert!(spec.validate().is_ok());
}

#[test]
fn unreachable_mtd_count_exhausts_the_generator() {
    // With a band this narrow a second in-band dose essentially never occurs.
    let mut spec = SimSpec::generated(TrialConfig::new(1, 2, 0.3, 0.0001, 0.0001, 12), Some(2), 2);
    if let keyboard::sim::ScenarioSource::Generated { max_attempts, .. } = &mut spec.scenarios {
        *max_attempts = 10;
    }
    assert!(matches!(
        run_study(&spec),
        Err(KeyboardError::GeneratorExhausted {
            target: 2,
            attempts: 10
        })
    ));
}
