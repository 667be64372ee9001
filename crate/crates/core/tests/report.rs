mod common;

use std::collections::BTreeSet;

use injectdrop::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use injectdrop::metrics::CalibrationCurve;
use injectdrop::report::{export_report, load_report, Manifest, MANIFEST_FILE, SUMMARY_FILE};
use injectdrop::tuner::RateGrid;
use injectdrop::Error;

fn small_report() -> ExperimentReport {
    let data = common::linear_task(300, 21);
    let mut config = ExperimentConfig::default();
    config.split.repeats = 2;
    config.embedded = true;
    config.train.epochs = 30;
    config.grid = RateGrid::log_spaced(0.01, 0.3, 4).unwrap();
    config.sweep.alpha_points = 19;
    run_experiment(&data, &config).unwrap()
}

fn listing(dir: &std::path::Path) -> BTreeSet<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect()
}

#[test]
fn manifest_lists_every_emitted_file() {
    let report = small_report();
    let dir = tempfile::tempdir().unwrap();
    let manifest = export_report(&report, dir.path()).unwrap();

    let mut listed: BTreeSet<String> = manifest.files.iter().map(|f| f.path.clone()).collect();
    listed.insert(MANIFEST_FILE.to_owned());
    assert_eq!(listed, listing(dir.path()));
    assert!(listed.contains(SUMMARY_FILE));
    assert!(listed.contains("repeat1_embedded.csv"));

    let on_disk: Manifest = serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(on_disk, manifest);
}

#[test]
fn curves_and_summary_read_back() {
    let report = small_report();
    let dir = tempfile::tempdir().unwrap();
    export_report(&report, dir.path()).unwrap();

    let file = std::fs::File::open(dir.path().join("repeat0_curve_scaled.csv")).unwrap();
    let curve = CalibrationCurve::read_csv(file).unwrap();
    assert_eq!(curve.len(), 19);
    assert_eq!(curve, report.repeats[0].curves.scaled);

    let sweep = std::fs::read_to_string(dir.path().join("repeat0_injected.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 1 + report.config.grid.len());

    let loaded = load_report(dir.path().join(SUMMARY_FILE)).unwrap();
    assert_eq!(loaded.to_json(), report.to_json());
}

#[test]
fn empty_report_is_rejected_before_writing() {
    let mut report = small_report();
    report.repeats.clear();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let err = export_report(&report, &out).unwrap_err();
    assert!(matches!(err, Error::InvalidConfig(_)));
    assert!(err.is_validation());
    assert!(!out.exists());
}

#[test]
fn re_export_overwrites_in_place() {
    let report = small_report();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(SUMMARY_FILE), "stale").unwrap();
    export_report(&report, dir.path()).unwrap();
    let first = listing(dir.path());
    export_report(&report, dir.path()).unwrap();
    assert_eq!(first, listing(dir.path()));
    assert_ne!(std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap(), "stale");
}

#[test]
fn unwritable_destination_names_the_path() {
    let report = small_report();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let err = export_report(&report, blocker.join("sub")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains("file"));
}
